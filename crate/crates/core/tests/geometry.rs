use proptest::prelude::*;
use std::f64::consts::TAU;

use rand::Rng as _;
use spidercnn::geometry::{
    augment, estimate_normals, knn_index, lex_order, sample_mesh, AugmentConfig, Point, PointCloud,
    TriangleMesh,
};
use spidercnn::rng::SeedStream;

fn d2(a: Point, b: Point) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

fn brute(points: &[Point], p: usize, k: usize, include_self: bool) -> Vec<usize> {
    let order = lex_order(points);
    let mut rank = vec![0; points.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let mut others: Vec<usize> = (0..points.len()).filter(|&q| q != p).collect();
    others.sort_by(|&a, &b| {
        d2(points[a], points[p])
            .total_cmp(&d2(points[b], points[p]))
            .then(rank[a].cmp(&rank[b]))
    });
    let mut out = Vec::new();
    if include_self {
        out.push(p);
    }
    out.extend(
        others
            .into_iter()
            .take(if include_self { k - 1 } else { k }),
    );
    out
}

fn distinct_points(raw: Vec<(i8, i8, i8)>) -> Vec<Point> {
    let mut pts: Vec<Point> = Vec::new();
    for (x, y, z) in raw {
        let p = [x as f64 * 0.5, y as f64 * 0.5, z as f64 * 0.5];
        if !pts.contains(&p) {
            pts.push(p);
        }
    }
    pts
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Small integer lattices make distance ties common.
    #[test]
    fn knn_matches_brute_force(raw in prop::collection::vec((-4i8..4, -4i8..4, -2i8..2), 2..80), k_seed in 0usize..1000, include_self: bool) {
        let pts = distinct_points(raw);
        prop_assume!(pts.len() >= 2);
        let max_k = if include_self { pts.len() } else { pts.len() - 1 };
        let k = 1 + k_seed % max_k;
        let idx = knn_index(&PointCloud::new(pts.clone()).unwrap(), k, include_self).unwrap();
        for p in 0..pts.len() {
            let want = brute(&pts, p, k, include_self);
            prop_assert_eq!(idx.neighbors(p), want.as_slice());
            for (j, &q) in idx.neighbors(p).iter().enumerate() {
                let off = idx.neighbor_offsets(p)[j];
                for a in 0..3 {
                    prop_assert_eq!(off[a], pts[q][a] - pts[p][a]);
                }
            }
        }
    }

    #[test]
    fn knn_is_independent_of_input_order(seed in 0u64..500) {
        let mut rng = SeedStream::new(seed).rng();
        let pts: Vec<Point> = (0..60).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let perm: Vec<usize> = (0..60).rev().collect();
        let cloud = PointCloud::new(pts).unwrap();
        let a = knn_index(&cloud, 8, true).unwrap();
        let b = knn_index(&cloud.select(&perm), 8, true).unwrap();
        for p in 0..60 {
            let mapped: Vec<usize> = b.neighbors(59 - p).iter().map(|&q| 59 - q).collect();
            prop_assert_eq!(a.neighbors(p), mapped.as_slice());
        }
    }
}

fn rotation(seed: u64) -> [[f64; 3]; 3] {
    let mut rng = SeedStream::new(seed).rng();
    let (a, b, c): (f64, f64, f64) = (
        rng.gen_range(0.0..TAU),
        rng.gen_range(0.0..TAU),
        rng.gen_range(0.0..TAU),
    );
    let rz = |t: f64| {
        [
            [t.cos(), -t.sin(), 0.0],
            [t.sin(), t.cos(), 0.0],
            [0.0, 0.0, 1.0],
        ]
    };
    let rx = |t: f64| {
        [
            [1.0, 0.0, 0.0],
            [0.0, t.cos(), -t.sin()],
            [0.0, t.sin(), t.cos()],
        ]
    };
    let mul = |m: [[f64; 3]; 3], n: [[f64; 3]; 3]| {
        let mut o = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                o[i][j] = (0..3).map(|k| m[i][k] * n[k][j]).sum();
            }
        }
        o
    };
    mul(rz(a), mul(rx(b), rz(c)))
}

fn apply(m: &[[f64; 3]; 3], p: Point) -> Point {
    [0, 1, 2].map(|i| (0..3).map(|j| m[i][j] * p[j]).sum())
}

#[test]
fn normals_rotate_with_the_cloud() {
    let mut rng = SeedStream::new(21).rng();
    let pts: Vec<Point> = (0..300)
        .map(|_| {
            let (u, v): (f64, f64) = (rng.gen_range(0.0..TAU), rng.gen_range(-1.0..1.0));
            let r = (1.0 - v * v).sqrt();
            [1.5 * r * u.cos(), r * u.sin(), 0.7 * v]
        })
        .collect();
    let base = estimate_normals(&PointCloud::new(pts.clone()).unwrap(), 12).unwrap();
    for seed in 0..5 {
        let m = rotation(seed);
        let rotated: Vec<Point> = pts.iter().map(|&p| apply(&m, p)).collect();
        let got = estimate_normals(&PointCloud::new(rotated).unwrap(), 12).unwrap();
        for (n, r) in base.iter().zip(&got) {
            let want = apply(&m, *n);
            let dot: f64 = (0..3).map(|i| want[i] * r[i]).sum();
            assert!(dot.abs() > 1.0 - 1e-9, "dot {dot}");
        }
    }
}

fn two_triangles() -> TriangleMesh {
    // Areas 0.5 and 1.5.
    TriangleMesh::new(
        vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [3.0, 0.0, 1.0],
            [0.0, 1.0, 1.0],
            [0.0, 0.0, 1.0],
        ],
        vec![[0, 1, 2], [5, 3, 4]],
    )
    .unwrap()
}

#[test]
fn face_choice_is_area_weighted() {
    let mesh = two_triangles();
    let n = 20_000;
    let s = sample_mesh(&mesh, n, &mut SeedStream::new(3).rng(), false).unwrap();
    let small = s.faces.iter().filter(|&&f| f == 0).count() as f64;
    let expected = [n as f64 * 0.25, n as f64 * 0.75];
    let observed = [small, n as f64 - small];
    let chi2: f64 = observed
        .iter()
        .zip(&expected)
        .map(|(o, e)| (o - e).powi(2) / e)
        .sum();
    // 99.9% quantile of χ² with one degree of freedom.
    assert!(chi2 < 10.83, "chi2 {chi2}");
}

#[test]
fn points_are_uniform_within_a_face() {
    let mesh = TriangleMesh::new(
        vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        vec![[0, 1, 2]],
    )
    .unwrap();
    let n = 40_000;
    let s = sample_mesh(&mesh, n, &mut SeedStream::new(4).rng(), false).unwrap();
    let raw: Vec<Point> = s
        .cloud
        .positions
        .iter()
        .map(|&p| s.denormalize(p))
        .collect();
    // Bin by the sub-triangle of the midpoint subdivision: four equal areas.
    let mut bins = [0f64; 4];
    for p in &raw {
        let (x, y) = (p[0], p[1]);
        let b = if x > 0.5 {
            0
        } else if y > 0.5 {
            1
        } else if x + y < 0.5 {
            2
        } else {
            3
        };
        bins[b] += 1.0;
    }
    let e = n as f64 / 4.0;
    let chi2: f64 = bins.iter().map(|o| (o - e).powi(2) / e).sum();
    // 99.9% quantile with three degrees of freedom.
    assert!(chi2 < 16.27, "chi2 {chi2}, bins {bins:?}");
    let mean_x = raw.iter().map(|p| p[0]).sum::<f64>() / n as f64;
    assert!((mean_x - 1.0 / 3.0).abs() < 0.01);
}

#[test]
fn sampled_cloud_is_normalized() {
    let s = sample_mesh(&two_triangles(), 500, &mut SeedStream::new(5).rng(), true).unwrap();
    let c = s.cloud.centroid();
    assert!(c.iter().all(|v| v.abs() < 1e-12));
    let r = s
        .cloud
        .positions
        .iter()
        .map(|p| d2(*p, [0.0; 3]).sqrt())
        .fold(0.0, f64::max);
    assert!((r - 1.0).abs() < 1e-12);
    assert_eq!(s.cloud.normals.as_ref().unwrap().len(), 500);
}

#[test]
fn jitter_has_the_configured_spread() {
    let cloud = PointCloud::new(vec![[0.0; 3]; 50_000]).unwrap();
    let cfg = AugmentConfig {
        rotate_up: false,
        jitter_sigma: 0.02,
        dropout_min_keep: None,
    };
    let out = augment(&cloud, &cfg, &mut SeedStream::new(6).rng()).unwrap();
    let vals: Vec<f64> = out.positions.iter().flatten().copied().collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let std =
        (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt();
    assert!((std / 0.02 - 1.0).abs() < 0.01, "std {std}");
    assert!(mean.abs() < 1e-3);
}
