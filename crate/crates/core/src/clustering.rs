//! Density-based instance grouping: greedy seeding on objectness, Gaussian
//! assignment around each seed, size pruning and per-instance class voting.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume4d::Volume4D;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::LengthMismatch {
                expected: cols,
                found: bad.len(),
            });
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Which quantities make up the clustering feature of a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum FeatureMode {
    #[serde(rename = "xyz")]
    Xyz,
    #[serde(rename = "xyzt")]
    Xyzt,
    #[serde(rename = "emb")]
    Emb,
    #[serde(rename = "emb+xyz")]
    EmbXyz,
    #[default]
    #[serde(rename = "emb+xyzt")]
    EmbXyzt,
}

impl FeatureMode {
    pub const ALL: [FeatureMode; 5] = [
        FeatureMode::Xyz,
        FeatureMode::Xyzt,
        FeatureMode::Emb,
        FeatureMode::EmbXyz,
        FeatureMode::EmbXyzt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureMode::Xyz => "xyz",
            FeatureMode::Xyzt => "xyzt",
            FeatureMode::Emb => "emb",
            FeatureMode::EmbXyz => "emb+xyz",
            FeatureMode::EmbXyzt => "emb+xyzt",
        }
    }

    fn uses_embeddings(self) -> bool {
        matches!(self, FeatureMode::Emb | FeatureMode::EmbXyz | FeatureMode::EmbXyzt)
    }

    /// Number of coordinate dimensions appended after the embedding.
    fn coord_dims(self) -> usize {
        match self {
            FeatureMode::Emb => 0,
            FeatureMode::Xyz | FeatureMode::EmbXyz => 3,
            FeatureMode::Xyzt | FeatureMode::EmbXyzt => 4,
        }
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature mode {s:?}")))
    }
}

/// Variances assigned to appended coordinate dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoordVariances {
    /// m², used for x, y and z.
    pub spatial: f64,
    /// slot², used for t.
    pub temporal: f64,
}

impl Default for CoordVariances {
    fn default() -> Self {
        CoordVariances {
            spatial: 1.0,
            temporal: 1.0,
        }
    }
}

/// Per-point network outputs consumed by clustering.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClusterFields {
    /// `M×D_e` embeddings.
    pub embeddings: Option<Matrix>,
    /// `M×D_e` diagonal variances of the embedding dimensions.
    pub embedding_variances: Option<Matrix>,
    /// `M` values in `[0, 1]`.
    pub objectness: Vec<f64>,
}

/// Features and matching diagonal variances, both `M×D`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFeatures {
    pub features: Matrix,
    pub variances: Matrix,
}

impl PointFeatures {
    pub fn dim(&self) -> usize {
        self.features.cols
    }

    pub fn len(&self) -> usize {
        self.features.rows
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows == 0
    }
}

pub fn build_point_features(
    volume: &Volume4D,
    fields: &ClusterFields,
    mode: FeatureMode,
    coord_variances: CoordVariances,
) -> Result<PointFeatures> {
    let m = volume.len();
    let (emb, emb_var) = if mode.uses_embeddings() {
        let e = fields.embeddings.as_ref().ok_or(Error::MissingEmbeddings(mode.name()))?;
        let v = fields
            .embedding_variances
            .as_ref()
            .ok_or(Error::MissingEmbeddings(mode.name()))?;
        if e.rows != m || v.rows != m {
            return Err(Error::LengthMismatch {
                expected: m,
                found: if e.rows != m { e.rows } else { v.rows },
            });
        }
        if v.cols != e.cols {
            return Err(Error::LengthMismatch {
                expected: e.cols,
                found: v.cols,
            });
        }
        (Some(e), Some(v))
    } else {
        (None, None)
    };
    let de = emb.map_or(0, |e| e.cols);
    let dc = mode.coord_dims();
    let d = de + dc;
    let mut features = Matrix::zeros(m, d);
    let mut variances = Matrix::zeros(m, d);
    let coord_var = [
        coord_variances.spatial,
        coord_variances.spatial,
        coord_variances.spatial,
        coord_variances.temporal,
    ];
    for i in 0..m {
        let f = features.row_mut(i);
        if let Some(e) = emb {
            f[..de].copy_from_slice(e.row(i));
        }
        f[de..].copy_from_slice(&volume.coords[i][..dc]);
        let v = variances.row_mut(i);
        if let Some(ev) = emb_var {
            v[..de].copy_from_slice(ev.row(i));
        }
        v[de..].copy_from_slice(&coord_var[..dc]);
    }
    Ok(PointFeatures {
        features,
        variances,
    })
}

fn check_variance(var: &[f64], row: usize) -> Result<()> {
    match var.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        Some(dim) => Err(Error::NonPositiveVariance {
            row,
            dim,
            value: var[dim],
        }),
        None => Ok(()),
    }
}

#[inline]
pub(crate) fn affinity_unchecked(center: &[f64], query: &[f64], var: &[f64], normalized: bool) -> f64 {
    let mut q = 0.0;
    for ((c, x), v) in center.iter().zip(query).zip(var) {
        let d = c - x;
        q += d * d / v;
    }
    let g = (-0.5 * q).exp();
    if normalized {
        g * normalizer(var)
    } else {
        g
    }
}

/// `(2π)^{-D/2} |Σ|^{-1/2}` for a diagonal covariance.
pub(crate) fn normalizer(var: &[f64]) -> f64 {
    let log_det: f64 = var.iter().map(|v| v.ln()).sum();
    (-(var.len() as f64) * 0.5 * (2.0 * PI).ln() - 0.5 * log_det).exp()
}

/// Probability of `query` belonging to the Gaussian centred at `center` with
/// diagonal variance `var`. Without `normalized` the density constant is
/// dropped and the value lies in `(0, 1]`.
pub fn gaussian_affinity(center: &[f64], query: &[f64], var: &[f64], normalized: bool) -> Result<f64> {
    if center.len() != query.len() || center.len() != var.len() {
        return Err(Error::LengthMismatch {
            expected: center.len(),
            found: if query.len() != center.len() { query.len() } else { var.len() },
        });
    }
    check_variance(var, 0)?;
    Ok(affinity_unchecked(center, query, var, normalized))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterParams {
    pub assign_prob: f64,
    pub seed_stop: f64,
    pub min_points: usize,
    pub normalized_pdf: bool,
    pub feature_mode: FeatureMode,
    pub coord_variances: CoordVariances,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            assign_prob: 0.5,
            seed_stop: 0.1,
            min_points: 25,
            normalized_pdf: false,
            feature_mode: FeatureMode::EmbXyzt,
            coord_variances: CoordVariances::default(),
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.assign_prob > 0.0 && self.assign_prob < 1.0) {
            return Err(Error::Config(format!(
                "assign_prob must lie in (0, 1), got {}",
                self.assign_prob
            )));
        }
        if self.min_points == 0 {
            return Err(Error::Config("min_points must be at least 1".into()));
        }
        if !self.seed_stop.is_finite() {
            return Err(Error::Config("seed_stop must be finite".into()));
        }
        let cv = self.coord_variances;
        if !(cv.spatial > 0.0 && cv.temporal > 0.0) {
            return Err(Error::Config("coordinate variances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: u32,
    pub seed: usize,
    pub members: Vec<usize>,
    /// Set by [`majority_vote_classes`].
    pub class: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InstanceAssignment {
    /// Per point; 0 means unassigned.
    pub instance: Vec<u32>,
    pub instances: Vec<Instance>,
}

impl InstanceAssignment {
    /// Drops instances rejected by `keep` and renumbers the rest `1..=K` in order.
    fn retain(&mut self, mut keep: impl FnMut(&Instance) -> bool) {
        self.instances.retain(|inst| keep(inst));
        self.instance.iter_mut().for_each(|id| *id = 0);
        for (k, inst) in self.instances.iter_mut().enumerate() {
            inst.id = k as u32 + 1;
            for &m in &inst.members {
                self.instance[m] = inst.id;
            }
        }
    }
}

/// Greedy clustering: the unassigned point with the highest objectness seeds a
/// new instance and claims every unassigned point whose affinity to it exceeds
/// `assign_prob`. Stops once the best remaining objectness falls below
/// `seed_stop`; instances smaller than `min_points` are then dissolved.
///
/// The seed always joins its own instance, which only matters for the
/// normalised density where the self-affinity can fall below the threshold.
pub fn cluster_volume(
    features: &PointFeatures,
    objectness: &[f64],
    params: &ClusterParams,
) -> Result<InstanceAssignment> {
    params.validate()?;
    let m = features.len();
    if objectness.len() != m || features.variances.rows != m {
        return Err(Error::LengthMismatch {
            expected: m,
            found: if objectness.len() != m { objectness.len() } else { features.variances.rows },
        });
    }
    for i in 0..m {
        check_variance(features.variances.row(i), i)?;
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| objectness[b].total_cmp(&objectness[a]).then(a.cmp(&b)));

    let mut assignment = InstanceAssignment {
        instance: vec![0; m],
        instances: Vec::new(),
    };
    let mut pool: Vec<usize> = (0..m).collect();
    let mut claimed = vec![false; m];
    for &seed in &order {
        if claimed[seed] {
            continue;
        }
        if objectness[seed] < params.seed_stop {
            break;
        }
        let id = assignment.instances.len() as u32 + 1;
        let center = features.features.row(seed);
        let var = features.variances.row(seed);
        let mut members = Vec::new();
        pool.retain(|&j| {
            let p = affinity_unchecked(center, features.features.row(j), var, params.normalized_pdf);
            if j == seed || p > params.assign_prob {
                members.push(j);
                false
            } else {
                true
            }
        });
        for &j in &members {
            claimed[j] = true;
            assignment.instance[j] = id;
        }
        assignment.instances.push(Instance {
            id,
            seed,
            members,
            class: None,
        });
    }
    assignment.retain(|inst| inst.members.len() >= params.min_points);
    Ok(assignment)
}

/// Assigns each instance its modal member class (ties to the smaller id) and
/// dissolves instances whose modal class is not a thing class. Returns the
/// class of every surviving instance, in id order.
pub fn majority_vote_classes(
    assignment: &mut InstanceAssignment,
    semantic: &[u32],
    is_thing: impl Fn(u32) -> bool,
) -> Result<Vec<u32>> {
    if semantic.len() != assignment.instance.len() {
        return Err(Error::LengthMismatch {
            expected: assignment.instance.len(),
            found: semantic.len(),
        });
    }
    for inst in &mut assignment.instances {
        let mut hist: BTreeMap<u32, usize> = BTreeMap::new();
        for &m in &inst.members {
            *hist.entry(semantic[m]).or_default() += 1;
        }
        // BTreeMap iterates ascending, so max_by_key with reversed ties keeps the smallest id
        inst.class = hist
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(c, _)| *c);
    }
    assignment.retain(|inst| inst.class.is_some_and(&is_thing));
    Ok(assignment.instances.iter().map(|i| i.class.unwrap()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume4d::Admission;

    fn volume(coords: Vec<[f64; 4]>) -> Volume4D {
        let n = coords.len();
        Volume4D {
            origin: (0..n).map(|i| (0, i)).collect(),
            coords,
            is_current: vec![true; n],
            admitted: vec![Admission::Current; n],
            n_current: n,
            window_start: 0,
            newest: 0,
            skipped: vec![],
        }
    }

    #[test]
    fn affinity_closed_forms() {
        assert_eq!(gaussian_affinity(&[1.0, 2.0], &[1.0, 2.0], &[0.3, 4.0], false).unwrap(), 1.0);
        let p = gaussian_affinity(&[0.0], &[1.0], &[1.0], false).unwrap();
        assert!((p - (-0.5f64).exp()).abs() < 1e-15);
        assert!((p - 0.6065).abs() < 1e-4);
        let p = gaussian_affinity(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 1.0], true).unwrap();
        assert!((p - 1.0 / (2.0 * PI)).abs() < 1e-15);
        assert!((p - 0.1592).abs() < 1e-4);
    }

    #[test]
    fn affinity_rejects_bad_variance() {
        assert!(matches!(
            gaussian_affinity(&[0.0], &[1.0], &[0.0], false),
            Err(Error::NonPositiveVariance { .. })
        ));
        assert!(gaussian_affinity(&[0.0], &[1.0], &[-1.0], false).is_err());
    }

    #[test]
    fn feature_modes() {
        let v = volume(vec![[1.0, 2.0, 3.0, 2.0]]);
        let fields = ClusterFields {
            embeddings: Some(Matrix::from_rows(&[vec![7.0, 8.0, 9.0]]).unwrap()),
            embedding_variances: Some(Matrix::from_rows(&[vec![0.5, 0.5, 0.5]]).unwrap()),
            objectness: vec![1.0],
        };
        let cv = CoordVariances::default();
        let f = build_point_features(&v, &fields, FeatureMode::Xyzt, cv).unwrap();
        assert_eq!(f.features.row(0), &[1.0, 2.0, 3.0, 2.0]);
        let f = build_point_features(&v, &fields, FeatureMode::Emb, cv).unwrap();
        assert_eq!(f.features.row(0), &[7.0, 8.0, 9.0]);
        let f = build_point_features(&v, &fields, FeatureMode::EmbXyzt, cv).unwrap();
        assert_eq!(f.dim(), 3 + 4);
        assert_eq!(f.variances.row(0), &[0.5, 0.5, 0.5, 1.0, 1.0, 1.0, 1.0]);
        let f = build_point_features(&v, &fields, FeatureMode::EmbXyz, cv).unwrap();
        assert_eq!(f.features.row(0), &[7.0, 8.0, 9.0, 1.0, 2.0, 3.0]);
        let bare = ClusterFields {
            objectness: vec![1.0],
            ..Default::default()
        };
        assert!(matches!(
            build_point_features(&v, &bare, FeatureMode::Emb, cv),
            Err(Error::MissingEmbeddings("emb"))
        ));
    }

    fn xyz_features(points: &[[f64; 3]], var: f64) -> PointFeatures {
        let rows: Vec<Vec<f64>> = points.iter().map(|p| p.to_vec()).collect();
        PointFeatures {
            features: Matrix::from_rows(&rows).unwrap(),
            variances: Matrix::from_vec(points.len(), 3, vec![var; points.len() * 3]).unwrap(),
        }
    }

    #[test]
    fn below_seed_stop_yields_nothing() {
        let f = xyz_features(&[[0.0; 3]; 30], 1.0);
        let a = cluster_volume(&f, &[0.05; 30], &ClusterParams::default()).unwrap();
        assert!(a.instances.is_empty());
        assert!(a.instance.iter().all(|i| *i == 0));
    }

    #[test]
    fn small_blob_is_pruned() {
        let pts: Vec<[f64; 3]> = (0..10).map(|i| [i as f64 * 0.01, 0.0, 0.0]).collect();
        let f = xyz_features(&pts, 1.0);
        let a = cluster_volume(&f, &[0.9; 10], &ClusterParams::default()).unwrap();
        assert!(a.instances.is_empty());
        assert!(a.instance.iter().all(|i| *i == 0));
    }

    #[test]
    fn empty_volume() {
        let f = xyz_features(&[], 1.0);
        let a = cluster_volume(&f, &[], &ClusterParams::default()).unwrap();
        assert!(a.instances.is_empty());
    }

    #[test]
    fn ids_contiguous_after_pruning() {
        // blob of 30, blob of 5, blob of 30, far apart
        let mut pts = Vec::new();
        let mut obj = Vec::new();
        for (cx, n) in [(0.0, 30), (100.0, 5), (200.0, 30)] {
            for k in 0..n {
                pts.push([cx + k as f64 * 0.001, 0.0, 0.0]);
                obj.push(if k == 0 { 0.9 } else { 0.5 });
            }
        }
        let a = cluster_volume(&xyz_features(&pts, 1.0), &obj, &ClusterParams::default()).unwrap();
        assert_eq!(a.instances.len(), 2);
        assert_eq!(a.instances[0].id, 1);
        assert_eq!(a.instances[1].id, 2);
        assert!(a.instance[30..35].iter().all(|i| *i == 0));
        for inst in &a.instances {
            assert!(inst.members.iter().all(|m| a.instance[*m] == inst.id));
        }
    }

    #[test]
    fn majority_vote_rules() {
        let mut a = InstanceAssignment {
            instance: vec![1, 1, 1, 2, 2, 3, 3, 3],
            instances: vec![
                Instance { id: 1, seed: 0, members: vec![0, 1, 2], class: None },
                Instance { id: 2, seed: 3, members: vec![3, 4], class: None },
                Instance { id: 3, seed: 5, members: vec![5, 6, 7], class: None },
            ],
        };
        // car 10, truck 18, road 40
        let sem = [10, 10, 18, 18, 10, 40, 40, 10];
        let classes = majority_vote_classes(&mut a, &sem, |c| c < 40).unwrap();
        assert_eq!(classes, vec![10, 10]);
        assert_eq!(a.instance, vec![1, 1, 1, 2, 2, 0, 0, 0]);
        assert_eq!(a.instances[1].members, vec![3, 4]);
    }
}
