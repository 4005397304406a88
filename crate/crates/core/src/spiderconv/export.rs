//! Scatter samples of learned filters over the unit ball.

use super::step::StepFunction;
use crate::error::Result;

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// The first `n` points of the (2, 3, 5) Halton sequence mapped to
/// `[-1, 1]³` that fall strictly inside the unit ball.
pub fn unit_ball_samples(n: usize) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(n);
    let mut i = 1u64;
    while out.len() < n {
        let p = [
            2.0 * radical_inverse(i, 2) - 1.0,
            2.0 * radical_inverse(i, 3) - 1.0,
            2.0 * radical_inverse(i, 5) - 1.0,
        ];
        if p[0] * p[0] + p[1] * p[1] + p[2] * p[2] < 1.0 {
            out.push(p);
        }
        i += 1;
    }
    out
}

/// Turns rank-indexed step weights into a radial step function on the unit
/// ball. Rank `j` covers `sqrt(j/K) <= |d| < sqrt((j+1)/K)`, the radii at which
/// a uniformly sampled surface patch holds `j` and `j+1` neighbors.
pub fn rank_step_function(rank_weights: &[f64]) -> Result<StepFunction> {
    let k = rank_weights.len() as f64;
    let radii = (0..=rank_weights.len())
        .map(|j| (j as f64 / k).sqrt())
        .collect();
    StepFunction::new(radii, rank_weights.to_vec())
}

/// `(x, y, z, value)` rows for `n` unit-ball samples of `step(d) · angular(d)`.
pub fn filter_scatter(
    rank_weights: &[f64],
    angular: impl Fn([f64; 3]) -> Result<f64>,
    n: usize,
) -> Result<Vec<[f64; 4]>> {
    let step = rank_step_function(rank_weights)?;
    unit_ball_samples(n)
        .into_iter()
        .map(|d| Ok([d[0], d[1], d[2], step.eval(d)? * angular(d)?]))
        .collect()
}
