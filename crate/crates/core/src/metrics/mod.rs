//! LSTQ and the comparison metrics (PQ family, MOTSA family, PTQ family, mIoU).
//!
//! Every quantity is accumulated from additive counts, so sequences can be
//! evaluated independently and merged. Tracking counts (identity switches)
//! need scans of a sequence in order; everything else is order-free.

mod lstq;
mod report;
mod segments;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classes::{ClassEntry, ClassMap, ClassMapSpec, IGNORE};
use crate::error::{Error, Result};
use crate::kitti_io::{load_sequence, PanopticLabels};

pub use lstq::{brute_force_s_assoc, lstq, s_assoc, s_cls, AssocAccumulator, ClassCounts, TubeKey};
pub use report::{ClassReport, MetricReport, MotsClass};
pub use segments::{
    mots_metrics, panoptic_counts, panoptic_quality, ptq_metrics, summarize_panoptic, Matching, MotsCounts,
    MotsState, PanopticSummary, PqCounts, SegmentKey, SegmentMatch, SegmentTable,
};

/// How tube scores are averaged across sequences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// One average over all tubes of all sequences.
    #[default]
    Pooled,
    /// Average per sequence, then across sequences.
    PerSequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub classes: ClassMap,
    /// Segment IoU must be strictly above this to match.
    pub match_threshold: f64,
    pub aggregation: Aggregation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig::new(ClassMap::default())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalConfigFile {
    #[serde(default = "default_threshold")]
    match_threshold: f64,
    #[serde(default)]
    aggregation: Aggregation,
    #[serde(default, rename = "class")]
    classes: Vec<ClassEntry>,
    #[serde(default)]
    ignore_raw: Vec<u32>,
    #[serde(default)]
    unknown_as_ignore: bool,
}

fn default_threshold() -> f64 {
    0.5
}

/// One non-ignored point with classes mapped to evaluation ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MappedPoint {
    pub gt_class: u32,
    pub gt_id: u32,
    pub pred_class: u32,
    pub pred_id: u32,
}

impl EvalConfig {
    pub fn new(classes: ClassMap) -> Self {
        EvalConfig {
            classes,
            match_threshold: default_threshold(),
            aggregation: Aggregation::Pooled,
        }
    }

    /// Parses the TOML form. Without `[[class]]` tables the SemanticKITTI map is used.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: EvalConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let classes = if file.classes.is_empty() {
            let mut spec = ClassMap::semantic_kitti().spec().clone();
            spec.unknown_as_ignore = file.unknown_as_ignore;
            if !file.ignore_raw.is_empty() {
                spec.ignore_raw = file.ignore_raw;
            }
            ClassMap::from_spec(spec)?
        } else {
            ClassMap::from_spec(ClassMapSpec {
                classes: file.classes,
                ignore_raw: file.ignore_raw,
                unknown_as_ignore: file.unknown_as_ignore,
            })?
        };
        let config = EvalConfig {
            classes,
            match_threshold: file.match_threshold,
            aggregation: file.aggregation,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.match_threshold) {
            return Err(Error::Config(format!(
                "match_threshold must lie in [0, 1), got {}",
                self.match_threshold
            )));
        }
        Ok(())
    }

    pub fn is_thing(&self, eval_class: u32) -> bool {
        self.classes.is_thing(eval_class)
    }

    /// `None` for points whose ground truth is ignored.
    pub fn map_point(&self, gt: &PanopticLabels, pred: &PanopticLabels, i: usize) -> Result<Option<MappedPoint>> {
        let gt_class = self.classes.to_eval(gt.semantic[i])?;
        if gt_class == IGNORE {
            return Ok(None);
        }
        Ok(Some(MappedPoint {
            gt_class,
            gt_id: gt.instance[i],
            pred_class: self.classes.to_eval(pred.semantic[i])?,
            pred_id: pred.instance[i],
        }))
    }
}

/// Additive counts of one or more sequences.
#[derive(Debug, Clone, Default)]
pub struct EvalCounts {
    pub class_counts: ClassCounts,
    pub assoc: AssocAccumulator,
    /// Scan-wise panoptic counts.
    pub pq: BTreeMap<u32, PqCounts>,
    /// Panoptic counts with segments spanning whole sequences.
    pub pq_sequence: BTreeMap<u32, PqCounts>,
    pub mots: BTreeMap<u32, MotsCounts>,
    pub sequences: usize,
    pub scans: usize,
    pub points: u64,
}

impl EvalCounts {
    pub fn merge(&mut self, o: &EvalCounts) {
        self.class_counts.merge(&o.class_counts);
        self.assoc.merge(&o.assoc);
        for (c, v) in &o.pq {
            self.pq.entry(*c).or_default().merge(v);
        }
        for (c, v) in &o.pq_sequence {
            self.pq_sequence.entry(*c).or_default().merge(v);
        }
        for (c, v) in &o.mots {
            self.mots.entry(*c).or_default().merge(v);
        }
        self.sequences += o.sequences;
        self.scans += o.scans;
        self.points += o.points;
    }

    pub fn report(&self, config: &EvalConfig) -> MetricReport {
        report::build(self, config)
    }
}

/// Streaming state of one sequence; scans must arrive in temporal order.
#[derive(Debug, Clone, Default)]
pub struct SequenceAccumulator {
    seq: u32,
    counts: EvalCounts,
    whole: SegmentTable,
    mots: MotsState,
}

impl SequenceAccumulator {
    pub fn new(seq: u32) -> Self {
        SequenceAccumulator {
            seq,
            ..Default::default()
        }
    }

    pub fn add_scan(&mut self, gt: &PanopticLabels, pred: &PanopticLabels, config: &EvalConfig) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(Error::LengthMismatch {
                expected: gt.len(),
                found: pred.len(),
            });
        }
        let mut table = SegmentTable::default();
        for i in 0..gt.len() {
            let Some(p) = config.map_point(gt, pred, i)? else {
                continue;
            };
            self.counts.class_counts.add(&p);
            self.counts.assoc.add(self.seq, &p, config);
            table.add(&p, config);
            self.whole.add(&p, config);
            self.counts.points += 1;
        }
        let matching = table.match_segments(config.match_threshold);
        segments::tally(&matching, &mut self.counts.pq);
        self.mots.add_scan(&matching, config);
        self.counts.scans += 1;
        Ok(())
    }

    pub fn finish(mut self, config: &EvalConfig) -> EvalCounts {
        segments::tally(&self.whole.match_segments(config.match_threshold), &mut self.counts.pq_sequence);
        self.counts.mots = self.mots.counts;
        self.counts.sequences = 1;
        self.counts
    }
}

/// Incremental evaluator over any number of sequences.
#[derive(Debug, Clone)]
pub struct Evaluator {
    config: EvalConfig,
    open: BTreeMap<u32, SequenceAccumulator>,
}

impl Evaluator {
    pub fn new(config: EvalConfig) -> Self {
        Evaluator {
            config,
            open: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &EvalConfig {
        &self.config
    }

    /// Adds the next scan of sequence `seq`.
    pub fn add_scan(&mut self, seq: u32, gt: &PanopticLabels, pred: &PanopticLabels) -> Result<()> {
        self.open
            .entry(seq)
            .or_insert_with(|| SequenceAccumulator::new(seq))
            .add_scan(gt, pred, &self.config)
    }

    pub fn counts(&self) -> EvalCounts {
        let mut total = EvalCounts::default();
        for acc in self.open.values() {
            total.merge(&acc.clone().finish(&self.config));
        }
        total
    }

    pub fn report(&self) -> MetricReport {
        self.counts().report(&self.config)
    }
}

/// Evaluates in-memory sequences; `gt[k]` and `pred[k]` are the scans of sequence `k`.
pub fn evaluate(gt: &[Vec<PanopticLabels>], pred: &[Vec<PanopticLabels>], config: &EvalConfig) -> Result<MetricReport> {
    if gt.len() != pred.len() {
        return Err(Error::LengthMismatch {
            expected: gt.len(),
            found: pred.len(),
        });
    }
    let parts: Vec<EvalCounts> = gt
        .par_iter()
        .zip(pred.par_iter())
        .enumerate()
        .map(|(k, (g, p))| {
            if g.len() != p.len() {
                return Err(Error::LengthMismatch {
                    expected: g.len(),
                    found: p.len(),
                });
            }
            let mut acc = SequenceAccumulator::new(k as u32);
            for (a, b) in g.iter().zip(p) {
                acc.add_scan(a, b, config)?;
            }
            Ok(acc.finish(config))
        })
        .collect::<Result<_>>()?;
    let mut total = EvalCounts::default();
    for p in &parts {
        total.merge(p);
    }
    Ok(total.report(config))
}

/// `<root>/sequences/<seq>` when present, else `<root>/<seq>`.
pub fn sequence_dir(root: &Path, seq: &str) -> PathBuf {
    let nested = root.join("sequences").join(seq);
    if nested.is_dir() {
        nested
    } else {
        root.join(seq)
    }
}

/// Label subdirectory holding predictions: `predictions/` if present, else `labels/`.
pub fn prediction_subdir(seq_dir: &Path) -> &'static str {
    if seq_dir.join("predictions").is_dir() {
        "predictions"
    } else {
        "labels"
    }
}

/// Evaluates predictions on disk against ground truth on disk, one sequence per task.
pub fn evaluate_dirs(gt_root: &Path, pred_root: &Path, sequences: &[String], config: &EvalConfig) -> Result<MetricReport> {
    let parts: Vec<EvalCounts> = sequences
        .par_iter()
        .enumerate()
        .map(|(k, seq)| {
            let gt_seq = load_sequence(sequence_dir(gt_root, seq), None)?;
            let pred_dir = sequence_dir(pred_root, seq);
            let pred_seq = load_sequence(&pred_dir, None)?;
            let sub = prediction_subdir(&pred_dir);
            let mut acc = SequenceAccumulator::new(k as u32);
            for i in gt_seq.range() {
                let g = gt_seq.labels(i)?;
                let p = pred_seq.labels_in(sub, i)?;
                acc.add_scan(&g, &p, config)?;
            }
            log::info!("sequence {seq}: {} scans evaluated", gt_seq.len());
            Ok(acc.finish(config))
        })
        .collect::<Result<_>>()?;
    let mut total = EvalCounts::default();
    for p in &parts {
        total.merge(p);
    }
    Ok(total.report(config))
}
