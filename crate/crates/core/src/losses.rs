//! Training objectives as pure functions returning values and analytic gradients.

use std::collections::BTreeMap;

use rand::Rng;

use crate::clustering::{affinity_unchecked, Matrix};
use crate::error::{Error, Result};
use crate::sampling::weighted_sample;

/// Instance membership over a volume; id 0 means "no instance".
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceGroundTruth {
    pub ids: Vec<u32>,
    groups: BTreeMap<u32, Vec<usize>>,
}

impl InstanceGroundTruth {
    pub fn new(ids: Vec<u32>) -> Self {
        let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, id) in ids.iter().enumerate() {
            if *id != 0 {
                groups.entry(*id).or_default().push(i);
            }
        }
        InstanceGroundTruth { ids, groups }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_instances(&self) -> usize {
        self.groups.len()
    }

    /// `(id, member indices)` in ascending id order; never empty member lists.
    pub fn instances(&self) -> impl Iterator<Item = (u32, &[usize])> {
        self.groups.iter().map(|(id, m)| (*id, m.as_slice()))
    }

    /// Mean of member rows of `values` for every instance.
    pub fn member_means(&self, values: &Matrix) -> BTreeMap<u32, Vec<f64>> {
        self.instances()
            .map(|(id, members)| (id, row_mean(values, members)))
            .collect()
    }
}

fn row_mean(values: &Matrix, members: &[usize]) -> Vec<f64> {
    let mut mean = vec![0.0; values.cols];
    for &m in members {
        for (acc, v) in mean.iter_mut().zip(values.row(m)) {
            *acc += v;
        }
    }
    let n = members.len() as f64;
    mean.iter_mut().for_each(|v| *v /= n);
    mean
}

/// Proximity to the instance centre: `1 − d / d_max` for members, 0 elsewhere,
/// 1 for single-point (zero-extent) instances.
pub fn objectness_target(coords: &[[f64; 3]], gt: &InstanceGroundTruth) -> Result<Vec<f64>> {
    if coords.len() != gt.len() {
        return Err(Error::LengthMismatch {
            expected: gt.len(),
            found: coords.len(),
        });
    }
    let mut o = vec![0.0; coords.len()];
    for (_, members) in gt.instances() {
        let n = members.len() as f64;
        let mut c = [0.0; 3];
        for &m in members {
            for k in 0..3 {
                c[k] += coords[m][k];
            }
        }
        c.iter_mut().for_each(|v| *v /= n);
        let d: Vec<f64> = members
            .iter()
            .map(|&m| crate::spatial::dist2(coords[m], c).sqrt())
            .collect();
        let d_max = d.iter().copied().fold(0.0, f64::max);
        for (&m, di) in members.iter().zip(&d) {
            o[m] = if d_max > 0.0 { 1.0 - di / d_max } else { 1.0 };
        }
    }
    Ok(o)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// `Σ (ô − o)²`, gradient `2(ô − o)`.
pub fn objectness_loss(pred: &[f64], target: &[f64]) -> Result<LossGrad> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch {
            expected: target.len(),
            found: pred.len(),
        });
    }
    let diff: Vec<f64> = pred.iter().zip(target).map(|(p, t)| p - t).collect();
    Ok(LossGrad {
        value: diff.iter().map(|d| d * d).sum(),
        grad: diff.iter().map(|d| 2.0 * d).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceLoss {
    pub value: f64,
    pub grad_features: Matrix,
    pub grad_variances: Matrix,
}

/// `Σ_j Σ_i (p̂_ij − p_ij)²` where `p̂_ij` is the affinity of point `i` under the
/// Gaussian of instance `j` (member-mean embedding and variance) and `p_ij` the
/// membership indicator. Gradients flow through the member means.
pub fn instance_loss(
    features: &Matrix,
    variances: &Matrix,
    gt: &InstanceGroundTruth,
    normalized: bool,
) -> Result<InstanceLoss> {
    let (m, d) = (features.rows, features.cols);
    if variances.rows != m || variances.cols != d || gt.len() != m {
        return Err(Error::LengthMismatch {
            expected: m * d,
            found: if gt.len() != m { gt.len() } else { variances.rows * variances.cols },
        });
    }
    if gt.num_instances() == 0 {
        return Err(Error::Invariant("instance loss needs at least one instance".into()));
    }
    if let Some(i) = variances.data.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::NonPositiveVariance {
            row: i / d.max(1),
            dim: i % d.max(1),
            value: variances.data[i],
        });
    }
    let mut value = 0.0;
    let mut gf = Matrix::zeros(m, d);
    let mut gv = Matrix::zeros(m, d);
    for (id, members) in gt.instances() {
        let e_mean = row_mean(features, members);
        let s_mean = row_mean(variances, members);
        let n = members.len() as f64;
        let mut g_mean_e = vec![0.0; d];
        let mut g_mean_s = vec![0.0; d];
        for i in 0..m {
            let e = features.row(i);
            let p = affinity_unchecked(&e_mean, e, &s_mean, normalized);
            let y = if gt.ids[i] == id { 1.0 } else { 0.0 };
            value += (p - y) * (p - y);
            let r = 2.0 * (p - y);
            let gi = gf.row_mut(i);
            for k in 0..d {
                let diff = e_mean[k] - e[k];
                // ∂p/∂e_i = p·diff/σ̄, ∂p/∂ē = −p·diff/σ̄
                let de = r * p * diff / s_mean[k];
                gi[k] += de;
                g_mean_e[k] -= de;
                let mut ds = 0.5 * p * diff * diff / (s_mean[k] * s_mean[k]);
                if normalized {
                    ds -= 0.5 * p / s_mean[k];
                }
                g_mean_s[k] += r * ds;
            }
        }
        for &j in members {
            for k in 0..d {
                gf.row_mut(j)[k] += g_mean_e[k] / n;
                gv.row_mut(j)[k] += g_mean_s[k] / n;
            }
        }
    }
    Ok(InstanceLoss {
        value,
        grad_features: gf,
        grad_variances: gv,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixLossGrad {
    pub value: f64,
    pub grad: Matrix,
}

/// `Σ_j (1/|I_j|) Σ_{i∈I_j} ‖σ_i − σ̄_j‖²` with `σ̄_j` the member mean.
pub fn variance_smoothness_loss(variances: &Matrix, gt: &InstanceGroundTruth) -> Result<MatrixLossGrad> {
    if gt.len() != variances.rows {
        return Err(Error::LengthMismatch {
            expected: variances.rows,
            found: gt.len(),
        });
    }
    let mut value = 0.0;
    let mut grad = Matrix::zeros(variances.rows, variances.cols);
    for (_, members) in gt.instances() {
        let mean = row_mean(variances, members);
        let n = members.len() as f64;
        for &i in members {
            let g = grad.row_mut(i);
            for (k, (s, mu)) in variances.row(i).iter().zip(&mean).enumerate() {
                value += (s - mu) * (s - mu) / n;
                // the mean's own dependence cancels because deviations sum to zero
                g[k] = 2.0 * (s - mu) / n;
            }
        }
    }
    Ok(MatrixLossGrad { value, grad })
}

/// Mean softmax cross-entropy over `sampled` rows of `scores` (`M×C` logits).
pub fn class_loss(scores: &Matrix, gt: &[usize], sampled: &[usize]) -> Result<MatrixLossGrad> {
    if gt.len() != scores.rows {
        return Err(Error::LengthMismatch {
            expected: scores.rows,
            found: gt.len(),
        });
    }
    let mut grad = Matrix::zeros(scores.rows, scores.cols);
    if sampled.is_empty() {
        return Ok(MatrixLossGrad { value: 0.0, grad });
    }
    let k = sampled.len() as f64;
    let mut value = 0.0;
    for &i in sampled {
        let c = gt[i];
        if c >= scores.cols {
            return Err(Error::Config(format!(
                "class {c} at point {i} outside the {} score columns",
                scores.cols
            )));
        }
        let row = scores.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|s| (s - max).exp()).sum();
        let log_z = max + z.ln();
        value += (log_z - row[c]) / k;
        let g = grad.row_mut(i);
        for (j, s) in row.iter().enumerate() {
            g[j] += ((s - log_z).exp() - if j == c { 1.0 } else { 0.0 }) / k;
        }
    }
    Ok(MatrixLossGrad { value, grad })
}

/// Up to `budget` indices without replacement, each point weighted by the
/// inverse frequency of its class so that classes are drawn roughly equally often.
pub fn balanced_class_sample(gt: &[u32], budget: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for c in gt {
        *counts.entry(*c).or_default() += 1;
    }
    let weights: Vec<f64> = gt.iter().map(|c| 1.0 / counts[c] as f64).collect();
    weighted_sample(&weights, budget, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub class: f64,
    pub objectness: f64,
    pub instance: f64,
    pub variance: f64,
}

/// Unweighted sum of the four objectives.
pub fn total_loss(c: &LossComponents) -> f64 {
    c.class + c.objectness + c.instance + c.variance
}
