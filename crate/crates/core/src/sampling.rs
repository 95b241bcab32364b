//! Seeded sampling without replacement.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

/// Deterministic generator for a `(seed, stream)` pair, so that independent
/// work items (windows, sequences) get reproducible streams.
pub fn rng_for(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `k` distinct indices out of `0..n`, ascending.
pub fn uniform_sample(n: usize, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let k = k.min(n);
    let mut out = index::sample(rng, n, k).into_vec();
    out.sort_unstable();
    out
}

/// `k` distinct indices drawn successively with probability proportional to
/// `weights` (Efraimidis–Spirakis keys), ascending.
///
/// Zero-weight items are only drawn once every positive-weight item is taken,
/// and then uniformly; all-zero weights therefore degenerate to uniform sampling.
pub fn weighted_sample(weights: &[f64], k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let k = k.min(weights.len());
    let mut keyed: Vec<(f64, usize)> = Vec::new();
    let mut zero: Vec<usize> = Vec::new();
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 && w.is_finite() {
            // u in (0, 1]; key = ln(u) / w is a monotone transform of u^(1/w)
            let u: f64 = 1.0 - rng.random::<f64>();
            keyed.push((u.ln() / w, i));
        } else {
            zero.push(i);
        }
    }
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<usize> = keyed.iter().take(k).map(|(_, i)| *i).collect();
    if out.len() < k {
        let extra = uniform_sample(zero.len(), k - out.len(), rng);
        out.extend(extra.into_iter().map(|j| zero[j]));
    }
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_weights() {
        let mut w = vec![0.0; 10];
        w[7] = 0.9;
        let mut rng = rng_for(1, 0);
        assert_eq!(weighted_sample(&w, 1, &mut rng), vec![7]);
    }

    #[test]
    fn zero_weights_fill_after_positive() {
        let w = [0.0, 0.5, 0.0, 0.25];
        let mut rng = rng_for(3, 0);
        let s = weighted_sample(&w, 3, &mut rng);
        assert!(s.contains(&1) && s.contains(&3));
        assert_eq!(s.len(), 3);
    }

    #[test]
    fn all_zero_is_uniform_count() {
        let w = [0.0; 5];
        let mut rng = rng_for(3, 0);
        assert_eq!(weighted_sample(&w, 2, &mut rng).len(), 2);
        assert_eq!(weighted_sample(&w, 9, &mut rng), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn deterministic() {
        let w: Vec<f64> = (0..50).map(|i| (i % 7) as f64).collect();
        let a = weighted_sample(&w, 10, &mut rng_for(9, 2));
        let b = weighted_sample(&w, 10, &mut rng_for(9, 2));
        assert_eq!(a, b);
    }

    #[test]
    fn weighted_frequency_matches_first_draw_probability() {
        // single draw: P(i) = w_i / Σw
        let w = [1.0, 2.0, 3.0, 4.0];
        let trials = 20_000;
        let mut counts = [0usize; 4];
        let mut rng = rng_for(11, 0);
        for _ in 0..trials {
            counts[weighted_sample(&w, 1, &mut rng)[0]] += 1;
        }
        for (i, c) in counts.iter().enumerate() {
            let p = w[i] / 10.0;
            let sd = (trials as f64 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - trials as f64 * p).abs() < 4.0 * sd, "{i}: {c}");
        }
    }
}
