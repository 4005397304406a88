use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::{Point, PointCloud};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Smallest cloud random input dropout may leave behind.
pub const DEFAULT_DP_MIN_KEEP: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    /// Random rotation about +z.
    pub rotate_up: bool,
    /// Std of the Gaussian position jitter; 0 disables it.
    pub jitter_sigma: f64,
    /// Random input dropout: keep a uniform count in `[min_keep, N]` of points.
    pub dropout_min_keep: Option<usize>,
}

impl AugmentConfig {
    pub const NONE: AugmentConfig = AugmentConfig {
        rotate_up: false,
        jitter_sigma: 0.0,
        dropout_min_keep: None,
    };

    /// Up-axis rotation plus 0.02 jitter.
    pub fn standard() -> Self {
        AugmentConfig {
            rotate_up: true,
            jitter_sigma: 0.02,
            dropout_min_keep: None,
        }
    }
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self::standard()
    }
}

fn rotate_point(p: Point, cos: f64, sin: f64) -> Point {
    [cos * p[0] - sin * p[1], sin * p[0] + cos * p[1], p[2]]
}

/// Rotates positions and normals by `angle` radians about +z.
pub fn rotate_up(cloud: &PointCloud, angle: f64) -> PointCloud {
    let (sin, cos) = angle.sin_cos();
    let mut out = cloud.clone();
    for p in &mut out.positions {
        *p = rotate_point(*p, cos, sin);
    }
    if let Some(normals) = &mut out.normals {
        for n in normals {
            *n = rotate_point(*n, cos, sin);
        }
    }
    out
}

/// A uniformly random subset of `n` points, in their original order.
pub fn subsample(cloud: &PointCloud, n: usize, rng: &mut Rng) -> Result<PointCloud> {
    if n == 0 || n > cloud.len() {
        return Err(Error::invalid(format!(
            "cannot keep {n} of {} points",
            cloud.len()
        )));
    }
    if n == cloud.len() {
        return Ok(cloud.clone());
    }
    let mut keep = index::sample(rng, cloud.len(), n).into_vec();
    keep.sort_unstable();
    Ok(cloud.select(&keep))
}

pub fn augment(cloud: &PointCloud, cfg: &AugmentConfig, rng: &mut Rng) -> Result<PointCloud> {
    let mut out = cloud.clone();
    if let Some(min_keep) = cfg.dropout_min_keep {
        let lo = min_keep.clamp(1, cloud.len());
        let keep = rng.gen_range(lo..=cloud.len());
        out = subsample(&out, keep, rng)?;
    }
    if cfg.rotate_up {
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        out = rotate_up(&out, angle);
    }
    if cfg.jitter_sigma > 0.0 {
        let noise = Normal::new(0.0, cfg.jitter_sigma)
            .map_err(|e| Error::invalid(format!("jitter sigma: {e}")))?;
        for p in &mut out.positions {
            for v in p.iter_mut() {
                *v += noise.sample(rng);
            }
        }
    }
    Ok(out)
}
