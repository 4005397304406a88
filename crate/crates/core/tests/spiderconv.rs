use rand::Rng as _;
use spidercnn::geometry::{knn_index, Point, PointCloud};
use spidercnn::rng::SeedStream;
use spidercnn::spiderconv::{
    exact_filter, spiderconv_forward, taylor_features, SpiderConvParams, SpiderConvShape,
    StepFunction, TaylorBasis, TaylorCoeffs,
};
use spidercnn::Tensor;

fn cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = SeedStream::new(seed).rng();
    let pts: Vec<Point> = (0..n)
        .map(|_| {
            [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ]
        })
        .collect();
    PointCloud::new(pts).unwrap()
}

fn features(n: usize, c: usize, seed: u64) -> Tensor {
    let mut rng = SeedStream::new(seed).rng();
    Tensor::new(
        vec![n, c],
        (0..n * c).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn layer(seed: u64) -> SpiderConvParams {
    let shape = SpiderConvShape {
        c1: 3,
        c2: 4,
        b: 3,
        k: 6,
    };
    SpiderConvParams::init(
        shape,
        TaylorBasis::Order3,
        false,
        &mut SeedStream::new(seed).rng(),
    )
}

/// Direct evaluation of `Σ_j Σ_v Σ_t F(q_j, v) · w_{i,v,t,j} · g_t(q_j − p)`.
fn naive(feats: &Tensor, pc: &PointCloud, params: &SpiderConvParams) -> Vec<f64> {
    let SpiderConvShape { c1, c2, b, k } = params.shape;
    let idx = knn_index(pc, k, true).unwrap();
    let mut out = vec![0.0; pc.len() * c2];
    for p in 0..pc.len() {
        for (j, (&q, off)) in idx
            .neighbors(p)
            .iter()
            .zip(idx.neighbor_offsets(p))
            .enumerate()
        {
            for t in 0..b {
                let g = params.taylor_coeffs(t).eval(*off);
                for i in 0..c2 {
                    for v in 0..c1 {
                        out[p * c2 + i] +=
                            feats.data()[q * c1 + v] * params.step_weights(i, v, t)[j] * g;
                    }
                }
            }
        }
    }
    out
}

#[test]
fn forward_matches_direct_sum() {
    let pc = cloud(40, 1);
    let f = features(40, 3, 2);
    let params = layer(3);
    let idx = knn_index(&pc, 6, true).unwrap();
    let got = spiderconv_forward(&f, &idx, &params).unwrap();
    for (a, b) in got.data().iter().zip(naive(&f, &pc, &params)) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn output_is_linear_in_features() {
    let pc = cloud(30, 4);
    let idx = knn_index(&pc, 6, true).unwrap();
    let params = layer(5);
    let (a, b) = (features(30, 3, 6), features(30, 3, 7));
    let combo: Vec<f64> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| 2.0 * x - 0.5 * y)
        .collect();
    let combo = Tensor::new(vec![30, 3], combo).unwrap();
    let fa = spiderconv_forward(&a, &idx, &params).unwrap();
    let fb = spiderconv_forward(&b, &idx, &params).unwrap();
    let fc = spiderconv_forward(&combo, &idx, &params).unwrap();
    for i in 0..fc.len() {
        let want = 2.0 * fa.data()[i] - 0.5 * fb.data()[i];
        assert!((fc.data()[i] - want).abs() < 1e-12);
    }
}

#[test]
fn output_rows_follow_point_permutation() {
    let pc = cloud(30, 8);
    let f = features(30, 3, 9);
    let params = layer(10);
    let perm: Vec<usize> = (0..30).map(|i| (i * 7) % 30).collect();
    let pf: Vec<f64> = perm
        .iter()
        .flat_map(|&i| f.data()[i * 3..i * 3 + 3].to_vec())
        .collect();
    let a = spiderconv_forward(&f, &knn_index(&pc, 6, true).unwrap(), &params).unwrap();
    let pc2 = pc.select(&perm);
    let b = spiderconv_forward(
        &Tensor::new(vec![30, 3], pf).unwrap(),
        &knn_index(&pc2, 6, true).unwrap(),
        &params,
    )
    .unwrap();
    for (row, &src) in perm.iter().enumerate() {
        assert_eq!(
            &b.data()[row * 4..row * 4 + 4],
            &a.data()[src * 4..src * 4 + 4]
        );
    }
}

#[test]
fn exact_filter_examples() {
    // Constant Taylor part reduces the filter to the step function.
    let step = StepFunction::new(vec![0.0, 0.5, 1.0], vec![2.0, -1.0]).unwrap();
    let mut c = TaylorCoeffs::zeros();
    c.0[0] = 1.0;
    assert_eq!(exact_filter(&step, &c, [0.1, 0.2, 0.0]).unwrap(), 2.0);
    assert_eq!(exact_filter(&step, &c, [0.6, 0.0, 0.0]).unwrap(), -1.0);
    // Coefficient 2 on x gives step(d) · 2x.
    let mut lin = TaylorCoeffs::zeros();
    lin.0[1] = 2.0;
    let want = -(2.0 * 0.6);
    assert!((exact_filter(&step, &lin, [0.6, 0.0, 0.0]).unwrap() - want).abs() < 1e-15);
    assert!(exact_filter(&step, &c, [1.0, 0.5, 0.0]).is_err());
}

#[test]
fn basis_restricts_features() {
    let d = [0.3, -0.2, 0.5];
    let full = taylor_features(d);
    for basis in [
        TaylorBasis::Linear,
        TaylorBasis::Trilinear,
        TaylorBasis::Order3,
    ] {
        let f = basis.features(d);
        for m in 0..full.len() {
            if basis.active().contains(&m) {
                assert_eq!(f[m], full[m]);
            } else {
                assert_eq!(f[m], 0.0);
            }
        }
    }
    assert_eq!(TaylorBasis::Linear.active().len(), 4);
    assert_eq!(TaylorBasis::Trilinear.active().len(), 8);
    assert_eq!(TaylorBasis::Order3.active().len(), 20);
}
