//! Online formation of overlapping 4D volumes: the newest scan in full plus
//! points sub-sampled from already processed past scans, all in one world frame.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kitti_io::{Pose, Scan};
use crate::sampling::{uniform_sample, weighted_sample};
use crate::spatial::KdTree;

/// How points of past scans are admitted into the volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Single scan, no propagation.
    Base,
    /// Every past point predicted as a thing class.
    Thing,
    /// A fixed fraction of each past scan, weighted by objectness.
    #[default]
    Importance,
    /// Objectness-weighted, with per-scan shares decaying with temporal distance.
    Decay,
    /// Importance sampling on every `stride`-th past scan only.
    Stride,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Base,
        Strategy::Thing,
        Strategy::Importance,
        Strategy::Decay,
        Strategy::Stride,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Base => "base",
            Strategy::Thing => "thing",
            Strategy::Importance => "importance",
            Strategy::Decay => "decay",
            Strategy::Stride => "stride",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VolumeConfig {
    pub strategy: Strategy,
    /// Window length in scans, the newest one included.
    pub tau: usize,
    /// Per-past-scan fraction for importance and stride sampling.
    pub fraction: f64,
    /// Fraction of all past points in the window distributed by temporal decay.
    pub decay_fraction: f64,
    pub stride: usize,
    pub time_scale: f64,
    /// Total past-point budget of a window for thing propagation.
    pub max_past_points: Option<usize>,
}

impl Default for VolumeConfig {
    fn default() -> Self {
        VolumeConfig {
            strategy: Strategy::Importance,
            tau: 4,
            fraction: 0.10,
            decay_fraction: 0.10,
            stride: 2,
            time_scale: 1.0,
            max_past_points: None,
        }
    }
}

impl VolumeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 {
            return Err(Error::Config("tau must be at least 1".into()));
        }
        for (name, f) in [("fraction", self.fraction), ("decay_fraction", self.decay_fraction)] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {f}")));
            }
        }
        if self.stride < 2 {
            return Err(Error::Config(format!("stride must be at least 2, got {}", self.stride)));
        }
        if !(self.time_scale.is_finite() && self.time_scale >= 0.0) {
            return Err(Error::Config(format!("invalid time_scale {}", self.time_scale)));
        }
        Ok(())
    }

    /// Window length actually used; `base` always processes a single scan.
    pub fn effective_tau(&self) -> usize {
        match self.strategy {
            Strategy::Base => 1,
            _ => self.tau,
        }
    }

    /// First scan index of the window whose newest scan is `t`.
    pub fn window_start(&self, t: usize) -> usize {
        (t + 1).saturating_sub(self.effective_tau())
    }
}

/// What the online pipeline remembers about an already processed scan.
#[derive(Debug, Clone, PartialEq)]
pub struct PastScanState {
    pub scan_index: usize,
    pub coords: Vec<[f64; 3]>,
    pub objectness: Vec<f64>,
    pub semantic: Vec<u32>,
    pub instance: Vec<u32>,
}

impl PastScanState {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.coords.len();
        for len in [self.objectness.len(), self.semantic.len(), self.instance.len()] {
            if len != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    found: len,
                });
            }
        }
        if let Some(i) = self
            .objectness
            .iter()
            .position(|o| !(o.is_finite() && (0.0..=1.0).contains(o)))
        {
            return Err(Error::Invariant(format!(
                "objectness {} of scan {} point {i} outside [0, 1]",
                self.objectness[i], self.scan_index
            )));
        }
        Ok(())
    }
}

/// Which rule admitted a point into the volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Admission {
    Current,
    Thing,
    Importance,
    Decay,
    Stride,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume4D {
    /// `(x, y, z, t)`, world metres and window slot × time scale.
    pub coords: Vec<[f64; 4]>,
    /// `(scan_index, point_index)` of every point.
    pub origin: Vec<(usize, usize)>,
    pub is_current: Vec<bool>,
    pub admitted: Vec<Admission>,
    pub n_current: usize,
    pub window_start: usize,
    pub newest: usize,
    /// Past scans of the window that contributed no points (stride strategy).
    pub skipped: Vec<usize>,
}

impl Volume4D {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn xyz(&self, i: usize) -> [f64; 3] {
        let c = self.coords[i];
        [c[0], c[1], c[2]]
    }

    /// Scans with points in the volume, ascending.
    pub fn scans(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.origin.iter().map(|o| o.0).collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// Maps sensor-frame points to the world frame.
pub fn align_scan(scan: &Scan, pose: &Pose) -> Result<Vec<[f64; 3]>> {
    if !pose.is_rigid() {
        return Err(Error::Config("pose is not a rigid transform".into()));
    }
    scan.points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let w = pose.apply([p[0] as f64, p[1] as f64, p[2] as f64]);
            if w.iter().all(|v| v.is_finite()) {
                Ok(w)
            } else {
                Err(Error::NonFinite { index: i })
            }
        })
        .collect()
}

fn fraction_count(fraction: f64, n: usize) -> usize {
    // the epsilon keeps e.g. 0.1 × 30 from rounding up to 4
    ((fraction * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Past points predicted as a thing class; uniformly sub-sampled down to `budget` if given.
pub fn sample_thing_prop(
    past: &PastScanState,
    is_thing: impl Fn(u32) -> bool,
    budget: Option<usize>,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let things: Vec<usize> = (0..past.len()).filter(|&i| is_thing(past.semantic[i])).collect();
    match budget {
        Some(b) if b < things.len() => uniform_sample(things.len(), b, rng)
            .into_iter()
            .map(|j| things[j])
            .collect(),
        _ => things,
    }
}

/// `⌈fraction·N⌉` indices drawn without replacement, weighted by objectness.
pub fn sample_importance(past: &PastScanState, fraction: f64, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let k = fraction_count(fraction, past.len());
    Ok(weighted_sample(&past.objectness, k, rng))
}

/// Softmax shares `e^i / Σ_j e^j` for past scans `i = 1..=k`, oldest first.
pub fn decay_shares(k: usize) -> Vec<f64> {
    if k == 0 {
        return Vec::new();
    }
    // shift by the max exponent for stability
    let w: Vec<f64> = (1..=k).map(|i| ((i as f64) - k as f64).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Integer per-scan counts summing to `budget` (largest remainder rounding of the decay shares).
pub fn decay_counts(k: usize, budget: usize) -> Vec<usize> {
    let shares = decay_shares(k);
    let exact: Vec<f64> = shares.iter().map(|s| s * budget as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest = budget - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..k).collect();
    // larger remainder first; ties go to the nearer scan
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(b.cmp(&a))
    });
    for i in order {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    counts
}

/// Distributes `total_budget` over past scans (oldest first) by temporal decay,
/// then importance-samples each scan's share. Scans with fewer points than
/// their share contribute all of them.
pub fn sample_temporal_decay(
    pasts: &[&PastScanState],
    total_budget: usize,
    rng: &mut impl Rng,
) -> Vec<Vec<usize>> {
    let counts = decay_counts(pasts.len(), total_budget);
    pasts
        .iter()
        .zip(counts)
        .map(|(p, c)| weighted_sample(&p.objectness, c.min(p.len()), rng))
        .collect()
}

/// Splits the past scans of the window ending at `newest` into contributing
/// (every `stride`-th, counted from the oldest slot `i = 1`) and skipped scans.
/// Returns `(contributing, skipped)`, each ascending.
pub fn strided_scans(newest: usize, tau: usize, stride: usize) -> (Vec<usize>, Vec<usize>) {
    let mut used = Vec::new();
    let mut skipped = Vec::new();
    for i in 1..tau {
        // slot i is scan newest − tau + i
        let Some(scan) = (newest + i).checked_sub(tau) else {
            continue;
        };
        if (i - 1) % stride == 0 {
            used.push(scan);
        } else {
            skipped.push(scan);
        }
    }
    (used, skipped)
}

/// Scan index and the point indices selected from it.
pub type ScanSample = (usize, Vec<usize>);
/// Scan index and `(semantic, instance)` of each of its points.
pub type ScanLabels = (usize, Vec<(u32, u32)>);

/// Importance samples of the strided past scans plus the list of skipped scans.
pub fn sample_strided(
    pasts: &[&PastScanState],
    newest: usize,
    tau: usize,
    stride: usize,
    fraction: f64,
    rng: &mut impl Rng,
) -> Result<(Vec<ScanSample>, Vec<usize>)> {
    if stride < 2 {
        return Err(Error::Config(format!("stride must be at least 2, got {stride}")));
    }
    let (used, skipped) = strided_scans(newest, tau, stride);
    let mut samples = Vec::new();
    for scan in used {
        if let Some(p) = pasts.iter().find(|p| p.scan_index == scan) {
            samples.push((scan, sample_importance(p, fraction, rng)?));
        }
    }
    Ok((samples, skipped))
}

/// Labels the points of skipped scans with the `(class, instance)` of their
/// nearest volume point. Equidistant neighbours resolve to the smallest
/// `(scan_index, point_index)`.
pub fn backfill_skipped(
    volume: &Volume4D,
    volume_labels: &[(u32, u32)],
    skipped: &[(usize, Vec<[f64; 3]>)],
) -> Result<Vec<ScanLabels>> {
    if volume.is_empty() {
        return Err(Error::EmptyVolume);
    }
    if volume_labels.len() != volume.len() {
        return Err(Error::LengthMismatch {
            expected: volume.len(),
            found: volume_labels.len(),
        });
    }
    let pts: Vec<[f64; 3]> = (0..volume.len()).map(|i| volume.xyz(i)).collect();
    let tree = KdTree::new(pts, volume.origin.clone());
    Ok(skipped
        .iter()
        .map(|(scan, coords)| {
            let labels = coords
                .iter()
                .map(|q| volume_labels[tree.nearest(*q).expect("non-empty").0])
                .collect();
            (*scan, labels)
        })
        .collect())
}

/// Assembles the volume for the window whose newest scan is `current_index`.
/// `pasts` must hold every past scan of the window; extra entries are ignored.
pub fn build_volume(
    current_index: usize,
    current: &[[f64; 3]],
    pasts: &[PastScanState],
    is_thing: impl Fn(u32) -> bool,
    config: &VolumeConfig,
    rng: &mut impl Rng,
) -> Result<Volume4D> {
    config.validate()?;
    let tau = config.effective_tau();
    let start = config.window_start(current_index);
    let mut window: Vec<&PastScanState> = Vec::new();
    for scan in start..current_index {
        let p = pasts
            .iter()
            .find(|p| p.scan_index == scan)
            .ok_or_else(|| Error::Invariant(format!("missing past state for scan {scan}")))?;
        p.validate()?;
        window.push(p);
    }

    let mut selected: Vec<(usize, Vec<usize>, Admission)> = Vec::new();
    let mut skipped = Vec::new();
    match config.strategy {
        Strategy::Base => {}
        Strategy::Thing => {
            let per_scan = config
                .max_past_points
                .map(|b| b / window.len().max(1));
            for p in &window {
                selected.push((p.scan_index, sample_thing_prop(p, &is_thing, per_scan, rng), Admission::Thing));
            }
        }
        Strategy::Importance => {
            for p in &window {
                selected.push((p.scan_index, sample_importance(p, config.fraction, rng)?, Admission::Importance));
            }
        }
        Strategy::Decay => {
            let total: usize = window.iter().map(|p| p.len()).sum();
            let budget = fraction_count(config.decay_fraction, total);
            for (p, idx) in window.iter().zip(sample_temporal_decay(&window, budget, rng)) {
                selected.push((p.scan_index, idx, Admission::Decay));
            }
        }
        Strategy::Stride => {
            let (samples, sk) =
                sample_strided(&window, current_index, tau, config.stride, config.fraction, rng)?;
            selected.extend(samples.into_iter().map(|(s, idx)| (s, idx, Admission::Stride)));
            skipped = sk;
        }
    }

    let total = current.len() + selected.iter().map(|s| s.1.len()).sum::<usize>();
    let mut v = Volume4D {
        coords: Vec::with_capacity(total),
        origin: Vec::with_capacity(total),
        is_current: Vec::with_capacity(total),
        admitted: Vec::with_capacity(total),
        n_current: current.len(),
        window_start: start,
        newest: current_index,
        skipped,
    };
    let slot_t = |scan: usize| (scan - start) as f64 * config.time_scale;
    for (scan, idx, how) in &selected {
        let p = window.iter().find(|p| p.scan_index == *scan).expect("selected from window");
        let t = slot_t(*scan);
        for &i in idx {
            let c = p.coords[i];
            v.coords.push([c[0], c[1], c[2], t]);
            v.origin.push((*scan, i));
            v.is_current.push(false);
            v.admitted.push(*how);
        }
    }
    let t = slot_t(current_index);
    for (i, c) in current.iter().enumerate() {
        v.coords.push([c[0], c[1], c[2], t]);
        v.origin.push((current_index, i));
        v.is_current.push(true);
        v.admitted.push(Admission::Current);
    }
    Ok(v)
}
