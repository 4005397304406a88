//! Point clouds and their preprocessing.

mod augment;
mod cloud;
mod knn;
mod mesh;
mod normals;
mod synth;

pub use augment::{augment, rotate_up, subsample, AugmentConfig, DEFAULT_DP_MIN_KEEP};
pub use cloud::{lex_order, PointCloud};
pub use knn::{dist2, knn_index, KdTree, NeighborIndex};
pub use mesh::{read_off, sample_mesh, sample_off_mesh, MeshSample, TriangleMesh};
pub use normals::estimate_normals;
pub use synth::{synth_shape, synth_shape_canonical, ShapeKind, TORUS_MAJOR, TORUS_MINOR};

pub type Point = [f64; 3];

pub(crate) fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Point, b: Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn scale(a: Point, s: f64) -> Point {
    [a[0] * s, a[1] * s, a[2] * s]
}
