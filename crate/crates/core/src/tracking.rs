//! Identity transfer between overlapping 4D windows and the online pipeline.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::clustering::{build_point_features, cluster_volume, majority_vote_classes, ClusterFields, ClusterParams, Matrix};
use crate::error::{Error, Result};
use crate::kitti_io::{PanopticLabels, ScanFields};
use crate::sampling::rng_for;
use crate::volume4d::{backfill_skipped, build_volume, PastScanState, VolumeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowPoint {
    pub scan: usize,
    pub point: usize,
    pub instance: u32,
    pub class: u32,
}

/// Instance ids of every point a window saw, including backfilled points.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WindowResult {
    pub window: usize,
    pub points: Vec<WindowPoint>,
    pub scans: BTreeSet<usize>,
}

impl WindowResult {
    pub fn new(window: usize, points: Vec<WindowPoint>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for p in &points {
            if !seen.insert((p.scan, p.point)) {
                return Err(Error::Invariant(format!(
                    "point ({}, {}) appears twice in window {window}",
                    p.scan, p.point
                )));
            }
        }
        let scans = points.iter().map(|p| p.scan).collect();
        Ok(WindowResult { window, points, scans })
    }

    pub fn relabel(&self, mapping: &BTreeMap<u32, u32>) -> WindowResult {
        let points = self
            .points
            .iter()
            .map(|p| WindowPoint {
                instance: if p.instance == 0 { 0 } else { mapping[&p.instance] },
                ..*p
            })
            .collect();
        WindowResult {
            window: self.window,
            points,
            scans: self.scans.clone(),
        }
    }

    pub fn instance_ids(&self) -> BTreeSet<u32> {
        self.points.iter().map(|p| p.instance).filter(|i| *i != 0).collect()
    }
}

/// Hands out sequence-global ids and remembers each window's local → global map.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackLedger {
    next_id: u32,
    maps: BTreeMap<usize, BTreeMap<u32, u32>>,
}

impl Default for TrackLedger {
    fn default() -> Self {
        TrackLedger {
            next_id: 1,
            maps: BTreeMap::new(),
        }
    }
}

impl TrackLedger {
    pub fn fresh(&mut self) -> u32 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    pub fn next_id(&self) -> u32 {
        self.next_id
    }

    pub fn issued(&self) -> u32 {
        self.next_id - 1
    }

    pub fn mapping(&self, window: usize) -> Option<&BTreeMap<u32, u32>> {
        self.maps.get(&window)
    }

    fn record(&mut self, window: usize, map: BTreeMap<u32, u32>) {
        self.maps.insert(window, map);
    }

    /// Every local id of `cur` gets a fresh global id.
    pub fn assign_all_fresh(&mut self, cur: &WindowResult) -> BTreeMap<u32, u32> {
        let map: BTreeMap<u32, u32> = cur.instance_ids().into_iter().map(|id| (id, self.fresh())).collect();
        self.record(cur.window, map.clone());
        map
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Association {
    /// Local id of the current window → global id.
    pub mapping: BTreeMap<u32, u32>,
    /// Accepted `(prev global id, cur local id, IoU)` pairs.
    pub matches: Vec<(u32, u32, f64)>,
    pub fresh: Vec<u32>,
    pub common_scans: Vec<usize>,
}

/// Point-set IoU between every (prev instance, cur instance) pair, over the
/// points both windows contain on their common scans.
pub fn overlap_ious(prev: &WindowResult, cur: &WindowResult) -> (Vec<usize>, BTreeMap<(u32, u32), f64>) {
    let common: Vec<usize> = prev.scans.intersection(&cur.scans).copied().collect();
    let common_set: BTreeSet<usize> = common.iter().copied().collect();
    let prev_ids: HashMap<(usize, usize), u32> = prev
        .points
        .iter()
        .filter(|p| common_set.contains(&p.scan))
        .map(|p| ((p.scan, p.point), p.instance))
        .collect();
    let mut prev_count: BTreeMap<u32, usize> = BTreeMap::new();
    let mut cur_count: BTreeMap<u32, usize> = BTreeMap::new();
    let mut inter: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for p in cur.points.iter().filter(|p| common_set.contains(&p.scan)) {
        let Some(&a) = prev_ids.get(&(p.scan, p.point)) else {
            continue;
        };
        let b = p.instance;
        if a != 0 {
            *prev_count.entry(a).or_default() += 1;
        }
        if b != 0 {
            *cur_count.entry(b).or_default() += 1;
        }
        if a != 0 && b != 0 {
            *inter.entry((a, b)).or_default() += 1;
        }
    }
    let ious = inter
        .into_iter()
        .map(|((a, b), n)| {
            let union = prev_count[&a] + cur_count[&b] - n;
            ((a, b), n as f64 / union as f64)
        })
        .collect();
    (common, ious)
}

/// Transfers ids from `prev` (global ids) to `cur` (window-local ids).
///
/// Pairs are accepted greedily by descending IoU, ties by `(prev id, cur id)`,
/// each instance at most once, and only when IoU is strictly above
/// `iou_threshold`. Unmatched current instances receive fresh ids in ascending
/// local-id order.
pub fn associate_windows(
    prev: &WindowResult,
    cur: &WindowResult,
    iou_threshold: f64,
    ledger: &mut TrackLedger,
) -> Association {
    let (common, ious) = overlap_ious(prev, cur);
    if common.is_empty() {
        warn!(
            "windows {} and {} share no scans; all ids are fresh",
            prev.window, cur.window
        );
    }
    let mut pairs: Vec<((u32, u32), f64)> = ious.into_iter().collect();
    pairs.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    let mut used_prev = BTreeSet::new();
    let mut mapping = BTreeMap::new();
    let mut matches = Vec::new();
    for ((a, b), iou) in pairs {
        if iou <= iou_threshold {
            break;
        }
        if used_prev.contains(&a) || mapping.contains_key(&b) {
            continue;
        }
        used_prev.insert(a);
        mapping.insert(b, a);
        matches.push((a, b, iou));
    }
    let mut fresh = Vec::new();
    for id in cur.instance_ids() {
        if let std::collections::btree_map::Entry::Vacant(e) = mapping.entry(id) {
            let g = ledger.fresh();
            e.insert(g);
            fresh.push(g);
        }
    }
    ledger.record(cur.window, mapping.clone());
    Association {
        mapping,
        matches,
        fresh,
        common_scans: common,
    }
}

/// One scan's worth of pipeline input.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanInput {
    pub scan_index: usize,
    /// World-frame coordinates (already ego-motion aligned).
    pub coords: Vec<[f64; 3]>,
    /// Predicted semantic class per point, raw label ids.
    pub semantic: Vec<u32>,
    pub fields: ScanFields,
}

impl ScanInput {
    pub fn validate(&self) -> Result<()> {
        let n = self.coords.len();
        for len in [self.semantic.len(), self.fields.len()] {
            if len != n {
                return Err(Error::LengthMismatch { expected: n, found: len });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub volume: VolumeConfig,
    pub cluster: ClusterParams,
    pub iou_threshold: f64,
    /// Transfer ids between consecutive windows; when off every window gets fresh ids.
    pub associate: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            volume: VolumeConfig::default(),
            cluster: ClusterParams::default(),
            iou_threshold: 0.5,
            associate: true,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.volume.validate()?;
        self.cluster.validate()?;
        if !(0.0..1.0).contains(&self.iou_threshold) {
            return Err(Error::Config(format!(
                "iou_threshold must lie in [0, 1), got {}",
                self.iou_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PipelineStats {
    pub scans: usize,
    pub peak_volume_points: usize,
    pub peak_scan_points: usize,
    pub total_volume_points: usize,
    pub total_scan_points: usize,
    pub instances_per_window: Vec<usize>,
    pub global_ids_issued: u32,
    #[serde(skip)]
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub labels: Vec<PanopticLabels>,
    pub stats: PipelineStats,
}

struct Remembered {
    input: ScanInput,
    instance: Vec<u32>,
}

fn gather_fields(volume_origin: &[(usize, usize)], memory: &BTreeMap<usize, &ScanInput>) -> Result<ClusterFields> {
    let first = memory.values().next().expect("window holds its newest scan");
    let dim = first.fields.dim;
    let m = volume_origin.len();
    let mut emb = Matrix::zeros(m, dim);
    let mut var = Matrix::zeros(m, dim);
    let mut obj = Vec::with_capacity(m);
    for (r, (scan, i)) in volume_origin.iter().enumerate() {
        let f = &memory[scan].fields;
        if f.dim != dim {
            return Err(Error::LengthMismatch { expected: dim, found: f.dim });
        }
        for (dst, src) in emb.row_mut(r).iter_mut().zip(f.embedding(*i)) {
            *dst = *src as f64;
        }
        for (dst, src) in var.row_mut(r).iter_mut().zip(f.variance(*i)) {
            *dst = *src as f64;
        }
        obj.push(f.objectness[*i] as f64);
    }
    Ok(ClusterFields {
        embeddings: Some(emb),
        embedding_variances: Some(var),
        objectness: obj,
    })
}

/// Runs the online pipeline over scans `0..n` supplied by `next_scan`.
///
/// Every scan's labels come from the window in which it is the newest scan.
/// Output instance ids are written only on points whose own predicted class is
/// a thing class.
pub fn run_online_pipeline(
    n_scans: usize,
    mut next_scan: impl FnMut(usize) -> Result<ScanInput>,
    is_thing: impl Fn(u32) -> bool,
    config: &PipelineConfig,
) -> Result<PipelineOutput> {
    config.validate()?;
    let started = Instant::now();
    let tau = config.volume.effective_tau();
    let mut memory: VecDeque<Remembered> = VecDeque::new();
    let mut ledger = TrackLedger::default();
    let mut prev: Option<WindowResult> = None;
    let mut labels = Vec::with_capacity(n_scans);
    let mut stats = PipelineStats::default();

    for t in 0..n_scans {
        let input = next_scan(t)?;
        input.validate()?;
        if input.scan_index != t {
            return Err(Error::Invariant(format!("scan {t} arrived as index {}", input.scan_index)));
        }
        while memory.len() + 1 > tau {
            memory.pop_front();
        }
        let pasts: Vec<PastScanState> = memory
            .iter()
            .map(|r| PastScanState {
                scan_index: r.input.scan_index,
                coords: r.input.coords.clone(),
                objectness: r.input.fields.objectness.iter().map(|o| *o as f64).collect(),
                semantic: r.input.semantic.clone(),
                instance: r.instance.clone(),
            })
            .collect();
        let mut rng = rng_for(config.seed, t as u64);
        let volume = build_volume(t, &input.coords, &pasts, &is_thing, &config.volume, &mut rng)?;

        let mut by_scan: BTreeMap<usize, &ScanInput> = memory.iter().map(|r| (r.input.scan_index, &r.input)).collect();
        by_scan.insert(t, &input);
        let fields = gather_fields(&volume.origin, &by_scan)?;
        let features = build_point_features(&volume, &fields, config.cluster.feature_mode, config.cluster.coord_variances)?;
        let mut assignment = cluster_volume(&features, &fields.objectness, &config.cluster)?;
        let semantic: Vec<u32> = volume.origin.iter().map(|(s, i)| by_scan[s].semantic[*i]).collect();
        majority_vote_classes(&mut assignment, &semantic, &is_thing)?;

        let vol_labels: Vec<(u32, u32)> = semantic.iter().copied().zip(assignment.instance.iter().copied()).collect();
        let mut points: Vec<WindowPoint> = volume
            .origin
            .iter()
            .zip(&vol_labels)
            .map(|((scan, point), (class, instance))| WindowPoint {
                scan: *scan,
                point: *point,
                instance: *instance,
                class: *class,
            })
            .collect();
        if !volume.skipped.is_empty() && !volume.is_empty() {
            let skipped: Vec<(usize, Vec<[f64; 3]>)> = volume
                .skipped
                .iter()
                .map(|s| (*s, by_scan[s].coords.clone()))
                .collect();
            for (scan, filled) in backfill_skipped(&volume, &vol_labels, &skipped)? {
                points.extend(filled.into_iter().enumerate().map(|(point, (class, instance))| WindowPoint {
                    scan,
                    point,
                    instance,
                    class,
                }));
            }
        }
        let cur = WindowResult::new(t, points)?;
        let mapping = match (&prev, config.associate) {
            (Some(p), true) => {
                let assoc = associate_windows(p, &cur, config.iou_threshold, &mut ledger);
                debug!(
                    "window {t}: {} inherited, {} fresh over scans {:?}",
                    assoc.matches.len(),
                    assoc.fresh.len(),
                    assoc.common_scans
                );
                assoc.mapping
            }
            _ => ledger.assign_all_fresh(&cur),
        };
        let global = cur.relabel(&mapping);

        let n = input.coords.len();
        let mut out = PanopticLabels::with_len(n);
        let mut scan_instance = vec![0u32; n];
        for p in global.points.iter().filter(|p| p.scan == t) {
            out.semantic[p.point] = p.class;
            if is_thing(p.class) {
                out.instance[p.point] = p.instance;
            }
            scan_instance[p.point] = p.instance;
        }
        stats.peak_volume_points = stats.peak_volume_points.max(volume.len());
        stats.peak_scan_points = stats.peak_scan_points.max(n);
        stats.total_volume_points += volume.len();
        stats.total_scan_points += n;
        stats.instances_per_window.push(assignment.instances.len());
        labels.push(out);
        prev = Some(global);
        memory.push_back(Remembered {
            input,
            instance: scan_instance,
        });
    }
    stats.scans = n_scans;
    stats.global_ids_issued = ledger.issued();
    stats.elapsed = started.elapsed();
    Ok(PipelineOutput { labels, stats })
}
