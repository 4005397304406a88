//! Synthetic primitive shapes with analytic normals.

use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::augment::rotate_up;
use super::{norm, scale, Point, PointCloud};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const TORUS_MAJOR: f64 = 1.0;
pub const TORUS_MINOR: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    /// Unit sphere.
    Sphere,
    /// Surface of `[-1, 1]³`.
    Cube,
    /// Radius 1, `z ∈ [-1, 1]`, with caps.
    Cylinder,
    /// Major radius 1, minor radius 0.4, around the z axis.
    Torus,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [
        ShapeKind::Sphere,
        ShapeKind::Cube,
        ShapeKind::Cylinder,
        ShapeKind::Torus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cube => "cube",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Torus => "torus",
        }
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::invalid(format!("unknown shape kind {s:?}")))
    }
}

fn sphere_point(rng: &mut Rng) -> Point {
    loop {
        let v: Point = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let l = norm(v);
        if l > 1e-12 {
            return scale(v, 1.0 / l);
        }
    }
}

fn sample_one(kind: ShapeKind, rng: &mut Rng) -> (Point, Point) {
    match kind {
        ShapeKind::Sphere => {
            let p = sphere_point(rng);
            (p, p)
        }
        ShapeKind::Cube => {
            let face = rng.gen_range(0..6);
            let axis = face / 2;
            let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
            let mut p = [0.0; 3];
            let mut n = [0.0; 3];
            for (d, v) in p.iter_mut().enumerate() {
                *v = if d == axis {
                    sign
                } else {
                    rng.gen_range(-1.0..1.0)
                };
            }
            n[axis] = sign;
            (p, n)
        }
        ShapeKind::Cylinder => {
            // Side area 4π, each cap π.
            let u = rng.gen::<f64>() * 6.0;
            if u < 4.0 {
                let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                let (s, c) = theta.sin_cos();
                ([c, s, rng.gen_range(-1.0..1.0)], [c, s, 0.0])
            } else {
                let sign = if u < 5.0 { 1.0 } else { -1.0 };
                let r = rng.gen::<f64>().sqrt();
                let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                let (s, c) = theta.sin_cos();
                ([r * c, r * s, sign], [0.0, 0.0, sign])
            }
        }
        ShapeKind::Torus => {
            let (big, small) = (TORUS_MAJOR, TORUS_MINOR);
            let u = rng.gen_range(0.0..std::f64::consts::TAU);
            // The area element is proportional to R + r·cos v.
            let v = loop {
                let v = rng.gen_range(0.0..std::f64::consts::TAU);
                if rng.gen::<f64>() * (big + small) <= big + small * v.cos() {
                    break v;
                }
            };
            let (su, cu) = u.sin_cos();
            let (sv, cv) = v.sin_cos();
            let ring = big + small * cv;
            ([ring * cu, ring * su, small * sv], [cv * cu, cv * su, sv])
        }
    }
}

/// `n` uniform surface samples in the shape's canonical pose.
pub fn synth_shape_canonical(
    kind: ShapeKind,
    n: usize,
    rng: &mut Rng,
    noise: f64,
) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::invalid("synthetic shape needs at least one point"));
    }
    let (mut positions, normals): (Vec<Point>, Vec<Point>) =
        (0..n).map(|_| sample_one(kind, rng)).unzip();
    if noise > 0.0 {
        for p in &mut positions {
            for v in p.iter_mut() {
                *v += noise * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
            }
        }
    }
    PointCloud::new(positions)?.with_normals(normals)
}

/// Like [`synth_shape_canonical`], followed by a random rotation about +z.
pub fn synth_shape(kind: ShapeKind, n: usize, rng: &mut Rng, noise: f64) -> Result<PointCloud> {
    let cloud = synth_shape_canonical(kind, n, rng, noise)?;
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    Ok(rotate_up(&cloud, angle))
}
