#ifndef PANOPTIC4D_H
#define PANOPTIC4D_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  P4D_STATUS_OK = 0,
  P4D_STATUS_NULL_POINTER = 1,
  P4D_STATUS_INVALID_ARGUMENT = 2,
  P4D_STATUS_IO = 3,
  P4D_STATUS_FORMAT = 4,
  P4D_STATUS_CONFIG = 5,
  P4D_STATUS_INVARIANT = 6,
  P4D_STATUS_PANIC = 7,
} P4dStatus;

/**
 * Streaming metric evaluator.
 */
typedef struct P4dEvaluator P4dEvaluator;

/**
 * Ground-truth or predicted labels of one scan.
 */
typedef struct P4dLabels P4dLabels;

/**
 * Headline scores. Undefined tracking scores (no thing segments) are NaN.
 */
typedef struct {
  double lstq;
  double s_cls;
  double s_assoc;
  double miou;
  double pq;
  double sq;
  double rq;
  double pq_dagger;
  double ptq;
  double sptq;
  double motsa;
  double smotsa;
  double precision;
  double recall;
  uint64_t tp;
  uint64_t fp;
  uint64_t fn_;
  uint64_t ids;
  uint64_t tubes;
  uint64_t scans;
} P4dScores;

typedef struct {
  double assign_prob;
  double seed_stop;
  uint32_t min_points;
  bool normalized_pdf;
} P4dClusterParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *p4d_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *p4d_version(void);

/**
 * `sqrt(s_cls * s_assoc)`; both inputs must lie in [0, 1].
 */
P4dStatus p4d_lstq(double s_cls, double s_assoc, double *out);

/**
 * Copies `n` raw class ids and instance ids into a new labels handle.
 */
P4dStatus p4d_labels_new(const uint32_t *semantic,
                         const uint32_t *instance,
                         size_t n,
                         P4dLabels **out);

/**
 * Reads a `.label` file. With `expected_n` > 0 the point count is checked.
 */
P4dStatus p4d_labels_read(const char *path, size_t expected_n, P4dLabels **out);

P4dStatus p4d_labels_write(const P4dLabels *labels, const char *path);

/**
 * Number of points; 0 for a null handle.
 */
size_t p4d_labels_len(const P4dLabels *labels);

/**
 * Borrowed pointer to the class ids, valid while the handle lives.
 */
const uint32_t *p4d_labels_semantic(const P4dLabels *labels);

/**
 * Borrowed pointer to the instance ids, valid while the handle lives.
 */
const uint32_t *p4d_labels_instance(const P4dLabels *labels);

void p4d_labels_free(P4dLabels *labels);

/**
 * New evaluator. `config_path` may be null for the SemanticKITTI defaults.
 */
P4dStatus p4d_evaluator_new(const char *config_path, P4dEvaluator **out);

/**
 * Adds the next scan of sequence `sequence`; scans of one sequence must come in order.
 */
P4dStatus p4d_evaluator_add_scan(P4dEvaluator *evaluator,
                                 uint32_t sequence,
                                 const P4dLabels *gt,
                                 const P4dLabels *pred);

P4dStatus p4d_evaluator_scores(const P4dEvaluator *evaluator, P4dScores *out);

/**
 * Full report as a JSON document; release it with [`p4d_string_free`].
 */
P4dStatus p4d_evaluator_report_json(const P4dEvaluator *evaluator, char **out);

void p4d_evaluator_free(P4dEvaluator *evaluator);

void p4d_string_free(char *s);

/**
 * Default clustering parameters.
 */
P4dClusterParams p4d_cluster_params_default(void);

/**
 * Greedy Gaussian clustering of `m` points with `d`-dimensional features and
 * variances (row-major `m×d`). Writes one instance id per point into
 * `out_ids` (0 = none) and the instance count into `out_count`. `params` may
 * be null for the defaults.
 */
P4dStatus p4d_cluster(const double *features,
                      const double *variances,
                      const double *objectness,
                      size_t m,
                      size_t d,
                      const P4dClusterParams *params,
                      uint32_t *out_ids,
                      uint32_t *out_count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PANOPTIC4D_H */
