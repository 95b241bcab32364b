//! Point-level classification and association scores.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::{EvalConfig, MappedPoint};
use crate::error::{Error, Result};
use crate::kitti_io::PanopticLabels;

/// `(sequence, instance id)`; tubes never cross sequences.
pub type TubeKey = (u32, u32);

/// Point-level TP/FP/FN per evaluation class.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub counts: BTreeMap<u32, [u64; 3]>,
}

impl ClassCounts {
    pub fn add(&mut self, p: &MappedPoint) {
        if p.gt_class == p.pred_class {
            self.counts.entry(p.gt_class).or_default()[0] += 1;
        } else {
            self.counts.entry(p.gt_class).or_default()[2] += 1;
            if p.pred_class != crate::classes::IGNORE {
                self.counts.entry(p.pred_class).or_default()[1] += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &ClassCounts) {
        for (c, v) in &other.counts {
            let e = self.counts.entry(*c).or_default();
            for k in 0..3 {
                e[k] += v[k];
            }
        }
    }

    pub fn tp_fp_fn(&self, class: u32) -> [u64; 3] {
        self.counts.get(&class).copied().unwrap_or_default()
    }

    /// `None` when the class occurs in neither ground truth nor prediction.
    pub fn iou(&self, class: u32) -> Option<f64> {
        let [tp, fp, fn_] = self.tp_fp_fn(class);
        let denom = tp + fp + fn_;
        (denom > 0).then(|| tp as f64 / denom as f64)
    }

    /// Mean IoU over the given classes that occur at all.
    pub fn mean_iou(&self, classes: impl IntoIterator<Item = u32>) -> f64 {
        let ious: Vec<f64> = classes.into_iter().filter_map(|c| self.iou(c)).collect();
        if ious.is_empty() {
            0.0
        } else {
            ious.iter().sum::<f64>() / ious.len() as f64
        }
    }
}

/// Sparse tube-overlap counts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssocAccumulator {
    pub gt_size: HashMap<TubeKey, u64>,
    pub pred_size: HashMap<TubeKey, u64>,
    pub tpa: HashMap<(TubeKey, TubeKey), u64>,
    /// Point count per gt class of every gt tube.
    pub gt_class_hist: HashMap<TubeKey, BTreeMap<u32, u64>>,
}

impl AssocAccumulator {
    pub fn add(&mut self, seq: u32, p: &MappedPoint, config: &EvalConfig) {
        let gt = (config.is_thing(p.gt_class) && p.gt_id != 0).then_some((seq, p.gt_id));
        let pr = (config.is_thing(p.pred_class) && p.pred_id != 0).then_some((seq, p.pred_id));
        if let Some(g) = gt {
            *self.gt_size.entry(g).or_default() += 1;
            *self.gt_class_hist.entry(g).or_default().entry(p.gt_class).or_default() += 1;
        }
        if let Some(s) = pr {
            *self.pred_size.entry(s).or_default() += 1;
        }
        if let (Some(g), Some(s)) = (gt, pr) {
            *self.tpa.entry((g, s)).or_default() += 1;
        }
    }

    pub fn merge(&mut self, other: &AssocAccumulator) {
        for (k, v) in &other.gt_size {
            *self.gt_size.entry(*k).or_default() += v;
        }
        for (k, v) in &other.pred_size {
            *self.pred_size.entry(*k).or_default() += v;
        }
        for (k, v) in &other.tpa {
            *self.tpa.entry(*k).or_default() += v;
        }
        for (k, h) in &other.gt_class_hist {
            let e = self.gt_class_hist.entry(*k).or_default();
            for (c, n) in h {
                *e.entry(*c).or_default() += n;
            }
        }
    }

    pub fn num_tubes(&self) -> usize {
        self.gt_size.len()
    }

    /// Per-tube score `(1/|gt(t)|) Σ_s TPA(s,t)·IoU(s,t)`.
    pub fn tube_scores(&self) -> BTreeMap<TubeKey, f64> {
        let mut scores: BTreeMap<TubeKey, f64> = self.gt_size.keys().map(|k| (*k, 0.0)).collect();
        // sum in a fixed order so results do not depend on hash iteration
        let mut pairs: Vec<(&(TubeKey, TubeKey), &u64)> = self.tpa.iter().collect();
        pairs.sort_unstable_by_key(|(k, _)| **k);
        for ((g, s), &tpa) in pairs {
            let gt = self.gt_size[g] as f64;
            let pr = self.pred_size[s] as f64;
            let tpa = tpa as f64;
            let iou = tpa / (gt + pr - tpa);
            *scores.get_mut(g).unwrap() += tpa * iou / gt;
        }
        scores
    }

    /// Majority gt class of a tube, ties to the smaller id.
    pub fn tube_class(&self, tube: &TubeKey) -> Option<u32> {
        self.gt_class_hist
            .get(tube)?
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(c, _)| *c)
    }

    /// Mean tube score; `None` when there are no gt tubes.
    pub fn score(&self) -> Option<f64> {
        let scores = self.tube_scores();
        if scores.is_empty() {
            None
        } else {
            Some(scores.values().sum::<f64>() / scores.len() as f64)
        }
    }

    /// Mean over sequences of each sequence's own mean tube score.
    pub fn score_per_sequence(&self) -> Option<f64> {
        let mut by_seq: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for (k, v) in self.tube_scores() {
            by_seq.entry(k.0).or_default().push(v);
        }
        if by_seq.is_empty() {
            return None;
        }
        let means: Vec<f64> = by_seq.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
        Some(means.iter().sum::<f64>() / means.len() as f64)
    }
}

/// Geometric mean of the classification and association scores.
pub fn lstq(s_cls: f64, s_assoc: f64) -> f64 {
    (s_cls * s_assoc).sqrt()
}

fn check_stream(gt: &[PanopticLabels], pred: &[PanopticLabels]) -> Result<()> {
    if gt.len() != pred.len() {
        return Err(Error::LengthMismatch {
            expected: gt.len(),
            found: pred.len(),
        });
    }
    for (g, p) in gt.iter().zip(pred) {
        if g.len() != p.len() {
            return Err(Error::LengthMismatch {
                expected: g.len(),
                found: p.len(),
            });
        }
    }
    Ok(())
}

pub(crate) fn for_each_point(
    gt: &[PanopticLabels],
    pred: &[PanopticLabels],
    config: &EvalConfig,
    mut f: impl FnMut(usize, usize, &MappedPoint),
) -> Result<()> {
    check_stream(gt, pred)?;
    for (frame, (g, p)) in gt.iter().zip(pred).enumerate() {
        for i in 0..g.len() {
            if let Some(mp) = config.map_point(g, p, i)? {
                f(frame, i, &mp);
            }
        }
    }
    Ok(())
}

/// Per-class IoU over all 4D points and their mean (classes absent from both sides skipped).
pub fn s_cls(gt: &[PanopticLabels], pred: &[PanopticLabels], config: &EvalConfig) -> Result<(ClassCounts, f64)> {
    let mut counts = ClassCounts::default();
    for_each_point(gt, pred, config, |_, _, p| counts.add(p))?;
    let mean = counts.mean_iou(config.classes.classes());
    Ok((counts, mean))
}

/// Association score of one sequence; 1.0 (with a warning) when the ground truth has no thing tubes.
pub fn s_assoc(gt: &[PanopticLabels], pred: &[PanopticLabels], config: &EvalConfig) -> Result<f64> {
    let mut acc = AssocAccumulator::default();
    for_each_point(gt, pred, config, |_, _, p| acc.add(0, p, config))?;
    Ok(acc.score().unwrap_or_else(|| {
        log::warn!("{NO_TUBES_WARNING}");
        1.0
    }))
}

pub(crate) const NO_TUBES_WARNING: &str = "ground truth contains no thing tubes; association score set to 1.0";

/// Reference evaluation of the association score: every tube is materialised as
/// an explicit set of `(frame, point)` ids and overlaps come from set intersections.
pub fn brute_force_s_assoc(gt: &[PanopticLabels], pred: &[PanopticLabels], config: &EvalConfig) -> Result<f64> {
    let mut gt_tubes: BTreeMap<u32, BTreeSet<(usize, usize)>> = BTreeMap::new();
    let mut pr_tubes: BTreeMap<u32, BTreeSet<(usize, usize)>> = BTreeMap::new();
    for_each_point(gt, pred, config, |frame, i, p| {
        if config.is_thing(p.gt_class) && p.gt_id != 0 {
            gt_tubes.entry(p.gt_id).or_default().insert((frame, i));
        }
        if config.is_thing(p.pred_class) && p.pred_id != 0 {
            pr_tubes.entry(p.pred_id).or_default().insert((frame, i));
        }
    })?;
    if gt_tubes.is_empty() {
        return Ok(1.0);
    }
    let mut total = 0.0;
    for t in gt_tubes.values() {
        let mut tube = 0.0;
        for s in pr_tubes.values() {
            let tpa = t.intersection(s).count();
            if tpa == 0 {
                continue;
            }
            let fpa = s.difference(t).count();
            let fna = t.difference(s).count();
            let iou = tpa as f64 / (tpa + fpa + fna) as f64;
            tube += tpa as f64 * iou;
        }
        total += tube / t.len() as f64;
    }
    Ok(total / gt_tubes.len() as f64)
}
