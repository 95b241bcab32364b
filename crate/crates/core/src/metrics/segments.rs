//! Segment-level matching: panoptic quality and tracking counts.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use super::{ClassCounts, EvalConfig, MappedPoint};
use crate::error::Result;
use crate::kitti_io::PanopticLabels;

/// `(class, id)`; stuff segments use id 0 (one segment per class).
pub type SegmentKey = (u32, u32);

/// Segment areas and same-class intersections over a set of points.
#[derive(Debug, Clone, Default)]
pub struct SegmentTable {
    gt_area: HashMap<SegmentKey, u64>,
    pred_area: HashMap<SegmentKey, u64>,
    inter: HashMap<(SegmentKey, SegmentKey), u64>,
}

/// One matched segment pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentMatch {
    pub gt: SegmentKey,
    pub pred: SegmentKey,
    pub iou: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Matching {
    pub matches: Vec<SegmentMatch>,
    pub unmatched_gt: Vec<SegmentKey>,
    pub unmatched_pred: Vec<SegmentKey>,
}

fn segment(class: u32, id: u32, config: &EvalConfig) -> Option<SegmentKey> {
    if class == crate::classes::IGNORE {
        None
    } else if config.is_thing(class) {
        (id != 0).then_some((class, id))
    } else {
        Some((class, 0))
    }
}

impl SegmentTable {
    pub fn add(&mut self, p: &MappedPoint, config: &EvalConfig) {
        let g = segment(p.gt_class, p.gt_id, config);
        let s = segment(p.pred_class, p.pred_id, config);
        if let Some(g) = g {
            *self.gt_area.entry(g).or_default() += 1;
        }
        if let Some(s) = s {
            *self.pred_area.entry(s).or_default() += 1;
        }
        if let (Some(g), Some(s)) = (g, s) {
            if g.0 == s.0 {
                *self.inter.entry((g, s)).or_default() += 1;
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.gt_area.is_empty() && self.pred_area.is_empty()
    }

    /// Same-class pairs with IoU above `threshold`. For thresholds ≥ 0.5 the
    /// matching is unique; lower thresholds resolve conflicts greedily by IoU.
    pub fn match_segments(&self, threshold: f64) -> Matching {
        let mut cands: Vec<SegmentMatch> = self
            .inter
            .iter()
            .map(|(&(g, s), &n)| {
                let n = n as f64;
                let iou = n / (self.gt_area[&g] as f64 + self.pred_area[&s] as f64 - n);
                SegmentMatch { gt: g, pred: s, iou }
            })
            .filter(|m| m.iou > threshold)
            .collect();
        cands.sort_by(|a, b| b.iou.total_cmp(&a.iou).then(a.gt.cmp(&b.gt)).then(a.pred.cmp(&b.pred)));
        let mut used_g = std::collections::HashSet::new();
        let mut used_s = std::collections::HashSet::new();
        let mut matches = Vec::new();
        for m in cands {
            if !used_g.contains(&m.gt) && !used_s.contains(&m.pred) {
                used_g.insert(m.gt);
                used_s.insert(m.pred);
                matches.push(m);
            }
        }
        matches.sort_by_key(|m| m.gt);
        let mut unmatched_gt: Vec<SegmentKey> = self.gt_area.keys().filter(|k| !used_g.contains(*k)).copied().collect();
        let mut unmatched_pred: Vec<SegmentKey> =
            self.pred_area.keys().filter(|k| !used_s.contains(*k)).copied().collect();
        unmatched_gt.sort_unstable();
        unmatched_pred.sort_unstable();
        Matching {
            matches,
            unmatched_gt,
            unmatched_pred,
        }
    }
}

/// Matched-segment counts of one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PqCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub iou_sum: f64,
}

impl PqCounts {
    pub fn merge(&mut self, o: &PqCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.iou_sum += o.iou_sum;
    }

    pub fn is_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }

    pub fn sq(&self) -> Option<f64> {
        if self.is_empty() {
            None
        } else if self.tp == 0 {
            Some(0.0)
        } else {
            Some(self.iou_sum / self.tp as f64)
        }
    }

    pub fn rq(&self) -> Option<f64> {
        (!self.is_empty()).then(|| self.tp as f64 / (self.tp as f64 + 0.5 * (self.fp + self.fn_) as f64))
    }

    pub fn pq(&self) -> Option<f64> {
        (!self.is_empty()).then(|| self.iou_sum / (self.tp as f64 + 0.5 * (self.fp + self.fn_) as f64))
    }
}

pub(crate) fn tally(matching: &Matching, out: &mut BTreeMap<u32, PqCounts>) {
    for m in &matching.matches {
        let c = out.entry(m.gt.0).or_default();
        c.tp += 1;
        c.iou_sum += m.iou;
    }
    for g in &matching.unmatched_gt {
        out.entry(g.0).or_default().fn_ += 1;
    }
    for s in &matching.unmatched_pred {
        out.entry(s.0).or_default().fp += 1;
    }
}

/// Per-class panoptic counts of one sequence. With `per_scan` every scan is
/// matched on its own; otherwise segments span the whole sequence.
pub fn panoptic_counts(
    gt: &[PanopticLabels],
    pred: &[PanopticLabels],
    config: &EvalConfig,
    per_scan: bool,
) -> Result<BTreeMap<u32, PqCounts>> {
    let mut out = BTreeMap::new();
    let mut table = SegmentTable::default();
    let mut current = 0usize;
    super::lstq::for_each_point(gt, pred, config, |frame, _, p| {
        if per_scan && frame != current {
            tally(&table.match_segments(config.match_threshold), &mut out);
            table = SegmentTable::default();
            current = frame;
        }
        table.add(p, config);
    })?;
    tally(&table.match_segments(config.match_threshold), &mut out);
    Ok(out)
}

/// Per-class PQ, SQ, RQ plus their class means.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PanopticSummary {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub pq_things: f64,
    pub pq_stuff: f64,
    /// PQ with stuff classes scored by plain class IoU.
    pub pq_dagger: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn summarize_panoptic(
    counts: &BTreeMap<u32, PqCounts>,
    class_counts: &ClassCounts,
    config: &EvalConfig,
) -> PanopticSummary {
    let present = || counts.iter().filter(|(_, c)| !c.is_empty());
    let dagger = config.classes.classes().filter_map(|c| {
        if config.is_thing(c) {
            counts.get(&c).and_then(PqCounts::pq)
        } else {
            class_counts.iou(c)
        }
    });
    PanopticSummary {
        pq_dagger: mean(dagger),
        pq: mean(present().filter_map(|(_, c)| c.pq())),
        sq: mean(present().filter_map(|(_, c)| c.sq())),
        rq: mean(present().filter_map(|(_, c)| c.rq())),
        pq_things: mean(present().filter(|(k, _)| config.is_thing(**k)).filter_map(|(_, c)| c.pq())),
        pq_stuff: mean(present().filter(|(k, _)| !config.is_thing(**k)).filter_map(|(_, c)| c.pq())),
    }
}

/// Panoptic quality of one sequence.
pub fn panoptic_quality(
    gt: &[PanopticLabels],
    pred: &[PanopticLabels],
    config: &EvalConfig,
    per_scan: bool,
) -> Result<(BTreeMap<u32, PqCounts>, PanopticSummary)> {
    let counts = panoptic_counts(gt, pred, config, per_scan)?;
    let (class_counts, _) = super::lstq::s_cls(gt, pred, config)?;
    let summary = summarize_panoptic(&counts, &class_counts, config);
    Ok((counts, summary))
}

/// Per-class tracking counts over scan-wise matches of thing segments.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct MotsCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub ids: u64,
    pub iou_sum: f64,
    /// IoU mass of the matches that carry an identity switch.
    pub ids_iou_sum: f64,
}

impl MotsCounts {
    pub fn merge(&mut self, o: &MotsCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.ids += o.ids;
        self.iou_sum += o.iou_sum;
        self.ids_iou_sum += o.ids_iou_sum;
    }

    pub fn gt_segments(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn motsa(&self) -> Option<f64> {
        let g = self.gt_segments();
        (g > 0).then(|| 1.0 - (self.fp + self.fn_ + self.ids) as f64 / g as f64)
    }

    pub fn smotsa(&self) -> Option<f64> {
        let g = self.gt_segments();
        (g > 0).then(|| (self.iou_sum - self.fp as f64 - self.ids as f64) / g as f64)
    }

    pub fn precision(&self) -> Option<f64> {
        let d = self.tp + self.fp;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    fn pq_denominator(&self) -> f64 {
        self.tp as f64 + 0.5 * (self.fp + self.fn_) as f64
    }

    pub fn ptq(&self) -> Option<f64> {
        let d = self.pq_denominator();
        (d > 0.0).then(|| (self.iou_sum - self.ids as f64) / d)
    }

    pub fn sptq(&self) -> Option<f64> {
        let d = self.pq_denominator();
        (d > 0.0).then(|| (self.iou_sum - self.ids_iou_sum) / d)
    }
}

/// Streaming tracker state for one sequence.
#[derive(Debug, Clone, Default)]
pub struct MotsState {
    last_match: HashMap<u32, u32>,
    pub counts: BTreeMap<u32, MotsCounts>,
}

impl MotsState {
    /// Consumes the per-scan matching of one scan.
    pub fn add_scan(&mut self, matching: &Matching, config: &EvalConfig) {
        for m in &matching.matches {
            if !config.is_thing(m.gt.0) {
                continue;
            }
            let c = self.counts.entry(m.gt.0).or_default();
            c.tp += 1;
            c.iou_sum += m.iou;
            if let Some(prev) = self.last_match.insert(m.gt.1, m.pred.1) {
                if prev != m.pred.1 {
                    c.ids += 1;
                    c.ids_iou_sum += m.iou;
                }
            }
        }
        for g in matching.unmatched_gt.iter().filter(|g| config.is_thing(g.0)) {
            self.counts.entry(g.0).or_default().fn_ += 1;
        }
        for s in matching.unmatched_pred.iter().filter(|s| config.is_thing(s.0)) {
            self.counts.entry(s.0).or_default().fp += 1;
        }
    }
}

/// Tracking counts of one sequence.
pub fn mots_metrics(
    gt: &[PanopticLabels],
    pred: &[PanopticLabels],
    config: &EvalConfig,
) -> Result<BTreeMap<u32, MotsCounts>> {
    let mut state = MotsState::default();
    let mut table = SegmentTable::default();
    let mut current = 0usize;
    super::lstq::for_each_point(gt, pred, config, |frame, _, p| {
        if frame != current {
            state.add_scan(&table.match_segments(config.match_threshold), config);
            table = SegmentTable::default();
            current = frame;
        }
        table.add(p, config);
    })?;
    state.add_scan(&table.match_segments(config.match_threshold), config);
    Ok(state.counts)
}

/// PTQ and sPTQ class means: things use tracking counts, stuff falls back to PQ.
pub fn ptq_metrics(
    pq: &BTreeMap<u32, PqCounts>,
    mots: &BTreeMap<u32, MotsCounts>,
    config: &EvalConfig,
) -> (f64, f64) {
    let mut ptq = Vec::new();
    let mut sptq = Vec::new();
    for (class, c) in pq.iter().filter(|(_, c)| !c.is_empty()) {
        if config.is_thing(*class) {
            let m = mots.get(class).copied().unwrap_or_default();
            if let (Some(a), Some(b)) = (m.ptq(), m.sptq()) {
                ptq.push(a);
                sptq.push(b);
            }
        } else if let Some(v) = c.pq() {
            ptq.push(v);
            sptq.push(v);
        }
    }
    (mean(ptq.into_iter()), mean(sptq.into_iter()))
}
