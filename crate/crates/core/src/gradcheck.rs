//! Finite-difference verification of the analytic loss gradients.
//!
//! Numerical gradients here are computed from loss *values* only, so they are
//! independent of the analytic gradient code they check.

use rand::Rng;
use serde::Serialize;

use crate::clustering::Matrix;
use crate::losses::{
    balanced_class_sample, class_loss, instance_loss, objectness_loss, objectness_target,
    variance_smoothness_loss, InstanceGroundTruth,
};
use crate::sampling::rng_for;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Central differences `(f(x + h) − f(x − h)) / 2h` per coordinate.
pub fn central_differences(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckRow {
    pub loss: &'static str,
    pub trials: usize,
    pub worst_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

struct Problem {
    coords: Vec<[f64; 3]>,
    features: Matrix,
    variances: Matrix,
    gt: InstanceGroundTruth,
}

fn random_problem(rng: &mut impl Rng) -> Problem {
    let m = rng.random_range(2..=100);
    let d = rng.random_range(1..=6);
    let k = rng.random_range(1..=4u32);
    let centers: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let mut ids: Vec<u32> = (0..m).map(|_| rng.random_range(0..=k)).collect();
    ids[0] = 1;
    let mut features = Matrix::zeros(m, d);
    for (i, id) in ids.iter().enumerate() {
        let row = features.row_mut(i);
        for (c, v) in row.iter_mut().enumerate() {
            let base = if *id == 0 { 0.0 } else { centers[*id as usize - 1][c] };
            *v = base + rng.random_range(-1.0..1.0);
        }
    }
    let variances = Matrix::from_vec(m, d, (0..m * d).map(|_| rng.random_range(0.5..2.0)).collect()).unwrap();
    let coords = (0..m)
        .map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-1.0..1.0)])
        .collect();
    Problem {
        coords,
        features,
        variances,
        gt: InstanceGroundTruth::new(ids),
    }
}

fn row(loss: &'static str, trials: usize, errors: &[f64], tolerance: f64) -> GradCheckRow {
    let worst = errors.iter().copied().fold(0.0, f64::max);
    GradCheckRow {
        loss,
        trials,
        worst_relative_error: worst,
        tolerance,
        passed: errors.len() == trials && worst < tolerance,
    }
}

/// Checks every loss on `trials` random problems (≤ 100 points, D ≤ 6).
pub fn check_all(seed: u64, trials: usize, step: f64, tolerance: f64) -> Vec<GradCheckRow> {
    let mut rng = rng_for(seed, 0x6772_6164);
    let mut obj = Vec::new();
    let mut ins = Vec::new();
    let mut ins_norm = Vec::new();
    let mut var = Vec::new();
    let mut cls = Vec::new();
    for _ in 0..trials {
        let p = random_problem(&mut rng);
        let (m, d) = (p.features.rows, p.features.cols);

        let target = objectness_target(&p.coords, &p.gt).unwrap();
        let pred: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
        let analytic = objectness_loss(&pred, &target).unwrap().grad;
        let numeric = central_differences(|x| objectness_loss(x, &target).unwrap().value, &pred, step);
        obj.push(relative_error(&analytic, &numeric));

        for (normalized, sink) in [(false, &mut ins), (true, &mut ins_norm)] {
            let l = instance_loss(&p.features, &p.variances, &p.gt, normalized).unwrap();
            let mut analytic = l.grad_features.data.clone();
            analytic.extend_from_slice(&l.grad_variances.data);
            let mut x = p.features.data.clone();
            x.extend_from_slice(&p.variances.data);
            let numeric = central_differences(
                |x| {
                    let f = Matrix::from_vec(m, d, x[..m * d].to_vec()).unwrap();
                    let v = Matrix::from_vec(m, d, x[m * d..].to_vec()).unwrap();
                    instance_loss(&f, &v, &p.gt, normalized).unwrap().value
                },
                &x,
                step,
            );
            sink.push(relative_error(&analytic, &numeric));
        }

        let analytic = variance_smoothness_loss(&p.variances, &p.gt).unwrap().grad.data;
        let numeric = central_differences(
            |x| {
                let v = Matrix::from_vec(m, d, x.to_vec()).unwrap();
                variance_smoothness_loss(&v, &p.gt).unwrap().value
            },
            &p.variances.data,
            step,
        );
        var.push(relative_error(&analytic, &numeric));

        let c = rng.random_range(2..=6usize);
        let classes: Vec<usize> = (0..m).map(|_| rng.random_range(0..c)).collect();
        let scores = Matrix::from_vec(m, c, (0..m * c).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let class_ids: Vec<u32> = classes.iter().map(|c| *c as u32).collect();
        let budget = rng.random_range(1..=m);
        let sampled = balanced_class_sample(&class_ids, budget, &mut rng);
        let analytic = class_loss(&scores, &classes, &sampled).unwrap().grad.data;
        let numeric = central_differences(
            |x| {
                let s = Matrix::from_vec(m, c, x.to_vec()).unwrap();
                class_loss(&s, &classes, &sampled).unwrap().value
            },
            &scores.data,
            step,
        );
        cls.push(relative_error(&analytic, &numeric));
    }
    vec![
        row("objectness", trials, &obj, tolerance),
        row("instance", trials, &ins, tolerance),
        row("instance (normalized)", trials, &ins_norm, tolerance),
        row("variance", trials, &var, tolerance),
        row("class", trials, &cls, tolerance),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn differences_of_quadratic() {
        let g = central_differences(|v| v[0] * v[0] + 3.0 * v[1], &[2.0, 5.0], 1e-5);
        assert!((g[0] - 4.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn relative_error_edges() {
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
        assert!((relative_error(&[1.0, 0.0], &[0.0, 0.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn all_losses_pass_small_run() {
        for r in check_all(3, 4, DEFAULT_STEP, DEFAULT_TOLERANCE) {
            assert!(r.passed, "{r:?}");
        }
    }
}
