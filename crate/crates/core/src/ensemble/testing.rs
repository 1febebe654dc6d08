//! Synthetic classification data for sanity checks and benches.

use rand_distr::{Distribution, StandardNormal};

use super::TrainSet;
use crate::seed;

/// `n` unit-variance Gaussian points in `dim` dimensions, alternating class
/// 0 / 1, with class means `separation` apart along the diagonal.
pub fn blobs(n: usize, dim: usize, separation: f64, seed: u64) -> TrainSet {
    let mut rng = seed::rng(seed);
    let step = separation / 2.0 / (dim as f64).sqrt();
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        let sign = if c == 1 { 1.0 } else { -1.0 };
        x.push(
            (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sign * step + z
                })
                .collect(),
        );
        y.push(c);
    }
    TrainSet { x, y }
}

/// Fraction of `data` where `p_object(x) >= 0.5` matches the label.
pub fn accuracy(p_object: impl Fn(&[f64]) -> f64, data: &TrainSet) -> f64 {
    let hits = data
        .x
        .iter()
        .zip(&data.y)
        .filter(|(x, &y)| (p_object(x) >= 0.5) as usize == y)
        .count();
    hits as f64 / data.len() as f64
}
