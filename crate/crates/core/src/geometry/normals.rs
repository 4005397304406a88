//! Normals by orthogonal-distance plane fitting.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::{dot, knn_index, norm, scale, sub, Point, PointCloud};
use crate::error::{Error, Result};

/// Relative eigenvalue below which a neighborhood direction counts as flat.
const DEGENERATE_RATIO: f64 = 1e-12;

/// Unit normal per point: the least-variance axis of its `k`-neighborhood
/// (self included), oriented away from the cloud centroid.
///
/// When the neighborhood does not span a plane, the first of `+z, +y, +x`
/// that is not nearly parallel to the neighborhood's principal direction is
/// projected onto its orthogonal complement and used instead.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<Vec<Point>> {
    if k < 3 {
        return Err(Error::invalid(format!(
            "normal estimation needs k >= 3, got {k}"
        )));
    }
    let index = knn_index(cloud, k, true)?;
    let centroid = cloud.centroid();
    let pts = &cloud.positions;
    Ok((0..cloud.len())
        .map(|p| {
            let nbrs = index.neighbors(p);
            let mut mean = [0.0; 3];
            for &q in nbrs {
                for d in 0..3 {
                    mean[d] += pts[q][d];
                }
            }
            let mean = scale(mean, 1.0 / nbrs.len() as f64);
            let mut cov = Matrix3::<f64>::zeros();
            for &q in nbrs {
                let c = sub(pts[q], mean);
                let v = Vector3::new(c[0], c[1], c[2]);
                cov += v * v.transpose();
            }
            let normal = plane_normal(cov);
            orient(normal, sub(pts[p], centroid))
        })
        .collect())
}

fn plane_normal(cov: Matrix3<f64>) -> Point {
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let largest = eig.eigenvalues[order[2]];
    let middle = eig.eigenvalues[order[1]];
    if largest <= 0.0 {
        return [0.0, 0.0, 1.0];
    }
    if middle <= DEGENERATE_RATIO * largest {
        let axis = eig.eigenvectors.column(order[2]);
        let axis = [axis[0], axis[1], axis[2]];
        for cand in [[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]] {
            let proj = sub(cand, scale(axis, dot(cand, axis)));
            let len = norm(proj);
            if len > 0.5 {
                return scale(proj, 1.0 / len);
            }
        }
    }
    let v = eig.eigenvectors.column(order[0]);
    let v = [v[0], v[1], v[2]];
    scale(v, 1.0 / norm(v))
}

fn orient(n: Point, outward: Point) -> Point {
    let s = dot(n, outward);
    let flip = if s != 0.0 {
        s < 0.0
    } else if n[2] != 0.0 {
        n[2] < 0.0
    } else if n[1] != 0.0 {
        n[1] < 0.0
    } else {
        n[0] < 0.0
    };
    if flip {
        scale(n, -1.0)
    } else {
        n
    }
}

#[cfg(test)]
mod tests {
    use super::super::cross;
    use super::*;

    #[test]
    fn plane_gives_vertical_normals() {
        let pts: Vec<Point> = (0..49)
            .map(|i| {
                [
                    (i % 7) as f64 * 0.3,
                    (i / 7) as f64 * 0.2 + 0.01 * (i % 3) as f64,
                    0.0,
                ]
            })
            .collect();
        let cloud = PointCloud::new(pts).unwrap();
        for n in estimate_normals(&cloud, 8).unwrap() {
            assert!((n[2].abs() - 1.0).abs() < 1e-9, "{n:?}");
        }
    }

    #[test]
    fn triangle_normal_is_cross_product() {
        let (a, b, c) = ([0.0, 0.0, 0.0], [1.0, 0.2, 0.1], [0.3, 1.0, -0.4]);
        let cloud = PointCloud::new(vec![a, b, c]).unwrap();
        let cr = cross(sub(b, a), sub(c, a));
        let want = scale(cr, 1.0 / norm(cr));
        for n in estimate_normals(&cloud, 3).unwrap() {
            assert!((dot(n, want).abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn collinear_neighborhood_does_not_fail() {
        let cloud = PointCloud::new((0..5).map(|i| [i as f64, 0.0, 0.0]).collect()).unwrap();
        for n in estimate_normals(&cloud, 3).unwrap() {
            assert!((norm(n) - 1.0).abs() < 1e-12);
            assert!(n[0].abs() < 1e-12);
        }
    }

    #[test]
    fn k_below_three_is_error() {
        let cloud = PointCloud::new(vec![[0.0; 3], [1.0; 3], [2.0; 3]]).unwrap();
        assert!(estimate_normals(&cloud, 2).is_err());
    }
}
