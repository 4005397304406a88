use std::sync::Arc;

use rand::Rng as _;

use super::*;
use crate::rng::SeedStream;
use crate::spiderconv::NeighborTable;
use crate::tensor::Tensor;

const SMOOTH: f64 = 1e-6;

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = SeedStream::new(seed).rng();
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// `Σ w ⊙ out` with fixed random weights, so every output entry matters.
fn weighted(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let w = tape.constant(rand_tensor(tape.shape(out), seed));
    let m = tape.mul(out, w)?;
    Ok(tape.sum_all(m))
}

fn check(f: impl Fn(&mut Tape, Var) -> Result<Var>, x: &Tensor) -> f64 {
    finite_diff_check(f, x, 1e-5).unwrap()
}

#[test]
fn relu_and_identity_matmul() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::matrix(2, 2, vec![-1.0, 2.0, 0.0, -3.0]).unwrap());
    let r = t.relu(x);
    assert_eq!(t.value(r).data(), &[0.0, 2.0, 0.0, 0.0]);
    let eye = t.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let y = t.matmul(x, eye).unwrap();
    assert_eq!(t.value(y), t.value(x));
}

#[test]
fn concat_shapes() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::zeros(&[3, 2]));
    let b = t.constant(Tensor::zeros(&[3, 5]));
    let c = t.concat(&[a, b], 1).unwrap();
    assert_eq!(t.shape(c), &[3, 7]);
    let d = t.concat(&[a, a], 0).unwrap();
    assert_eq!(t.shape(d), &[6, 2]);
    assert!(t.concat(&[a, b], 0).is_err());
}

#[test]
fn topk_examples() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::matrix(3, 2, vec![3.0, 1.0, 2.0, 5.0, 4.0, 0.0]).unwrap());
    let p = t.topk_pool(x, 2).unwrap();
    assert_eq!(t.value(p).data(), &[4.0, 3.0, 5.0, 1.0]);
    let one = t.topk_pool(x, 1).unwrap();
    let mx = t.reduce(x, 0, ReduceKind::Max).unwrap();
    assert_eq!(t.value(one).data(), t.value(mx).data());
    assert!(t.topk_pool(x, 4).is_err());
}

#[test]
fn topk_gradient_routes_to_selected_rows() {
    let mut t = Tape::new();
    let x = t.param(Tensor::matrix(3, 2, vec![3.0, 1.0, 2.0, 5.0, 4.0, 0.0]).unwrap());
    let p = t.topk_pool(x, 2).unwrap();
    let s = t.sum_all(p);
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
}

#[test]
fn topk_is_permutation_invariant() {
    let x = rand_tensor(&[40, 5], 3);
    let mut rng = SeedStream::new(9).rng();
    let mut perm: Vec<usize> = (0..40).collect();
    rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
    let mut t = Tape::new();
    let a = t.constant(x.clone());
    let b = t.gather(a, perm).unwrap();
    let pa = t.topk_pool(a, 3).unwrap();
    let pb = t.topk_pool(b, 3).unwrap();
    assert_eq!(t.value(pa), t.value(pb));
}

#[test]
fn sum_and_relu_backward() {
    let mut t = Tape::new();
    let x = t.param(Tensor::vector(vec![-2.0, 0.5, 3.0]));
    let r = t.relu(x);
    let s = t.sum_all(r);
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 1.0]);
}

#[test]
fn backward_needs_scalar() {
    let mut t = Tape::new();
    let x = t.param(Tensor::zeros(&[2]));
    let r = t.relu(x);
    assert!(t.backward(r).is_err());
}

#[test]
fn constants_receive_no_gradient() {
    let mut t = Tape::new();
    let c = t.constant(Tensor::vector(vec![1.0, 2.0]));
    let p = t.param(Tensor::vector(vec![3.0, 4.0]));
    let m = t.mul(c, p).unwrap();
    let s = t.sum_all(m);
    let g = t.backward(s).unwrap();
    assert!(g.get(c).is_none());
    assert_eq!(g.get(p).unwrap().data(), &[1.0, 2.0]);
}

#[test]
fn gradcheck_matmul_both_sides() {
    let a = rand_tensor(&[4, 3], 1);
    let b = rand_tensor(&[3, 5], 2);
    let bb = b.clone();
    let e = check(
        move |t, x| {
            let c = t.constant(bb.clone());
            let y = t.matmul(x, c)?;
            weighted(t, y, 10)
        },
        &a,
    );
    assert!(e < SMOOTH, "{e}");
    let e = check(
        move |t, x| {
            let c = t.constant(a.clone());
            let y = t.matmul(c, x)?;
            weighted(t, y, 11)
        },
        &b,
    );
    assert!(e < SMOOTH, "{e}");
}

#[test]
fn gradcheck_broadcast_add_mul() {
    let x = rand_tensor(&[4, 3], 3);
    let row = rand_tensor(&[3], 4);
    let xc = x.clone();
    for mul in [false, true] {
        let xc = xc.clone();
        let e = check(
            move |t, r| {
                let c = t.constant(xc.clone());
                let y = if mul { t.mul(c, r)? } else { t.add(c, r)? };
                weighted(t, y, 12)
            },
            &row,
        );
        assert!(e < SMOOTH, "{e}");
        let rc = row.clone();
        let e = check(
            move |t, v| {
                let c = t.constant(rc.clone());
                let y = if mul { t.mul(v, c)? } else { t.add(v, c)? };
                weighted(t, y, 13)
            },
            &x,
        );
        assert!(e < SMOOTH, "{e}");
    }
}

#[test]
fn gradcheck_relu_concat_gather() {
    let x = rand_tensor(&[5, 3], 5);
    let e = check(
        |t, v| {
            let r = t.relu(v);
            let c = t.concat(&[r, v], 1)?;
            let g = t.gather(c, vec![4, 0, 0, 2])?;
            weighted(t, g, 14)
        },
        &x,
    );
    assert!(e < SMOOTH, "{e}");
}

#[test]
fn gradcheck_reductions() {
    let x = rand_tensor(&[2, 5, 3], 6);
    for kind in [ReduceKind::Sum, ReduceKind::Mean, ReduceKind::Max] {
        for axis in 0..3 {
            let e = check(
                move |t, v| {
                    let r = t.reduce(v, axis, kind)?;
                    weighted(t, r, 15)
                },
                &x,
            );
            assert!(e < SMOOTH, "{kind:?} axis {axis}: {e}");
        }
    }
}

#[test]
fn gradcheck_pooling() {
    let x = rand_tensor(&[9, 4], 7);
    let e = check(
        |t, v| {
            let p = t.topk_pool_segments(v, &[0..4, 4..9], 2)?;
            weighted(t, p, 16)
        },
        &x,
    );
    assert!(e < SMOOTH, "{e}");
    let e = check(
        |t, v| {
            let p = t.segment_max(v, &[0..5, 5..9])?;
            weighted(t, p, 17)
        },
        &x,
    );
    assert!(e < SMOOTH, "{e}");
}

#[test]
fn gradcheck_softmax_cross_entropy() {
    let x = rand_tensor(&[4, 3], 8);
    let e = check(|t, v| t.softmax_cross_entropy(v, &[0, 2, 1, 2]), &x);
    assert!(e < SMOOTH, "{e}");
}

#[test]
fn gradcheck_batch_norm_all_inputs() {
    let x = rand_tensor(&[6, 3], 9);
    let gamma = rand_tensor(&[3], 10);
    let beta = rand_tensor(&[3], 11);
    let (g2, b2) = (gamma.clone(), beta.clone());
    let e = check(
        move |t, v| {
            let mut s = BatchNormState::new(3);
            let g = t.constant(g2.clone());
            let b = t.constant(b2.clone());
            let y = t.batch_norm(v, g, b, &mut s, true)?;
            weighted(t, y, 18)
        },
        &x,
    );
    assert!(e < SMOOTH, "x: {e}");
    let (x2, b2) = (x.clone(), beta.clone());
    let e = check(
        move |t, g| {
            let mut s = BatchNormState::new(3);
            let xv = t.constant(x2.clone());
            let b = t.constant(b2.clone());
            let y = t.batch_norm(xv, g, b, &mut s, true)?;
            weighted(t, y, 19)
        },
        &gamma,
    );
    assert!(e < SMOOTH, "gamma: {e}");
    let e = check(
        move |t, b| {
            let mut s = BatchNormState::new(3);
            let xv = t.constant(x.clone());
            let g = t.constant(gamma.clone());
            let y = t.batch_norm(xv, g, b, &mut s, true)?;
            weighted(t, y, 20)
        },
        &beta,
    );
    assert!(e < SMOOTH, "beta: {e}");
}

#[test]
fn gradcheck_dropout_fixed_mask() {
    let x = rand_tensor(&[4, 4], 12);
    let e = check(
        |t, v| {
            let mut rng = SeedStream::new(3).rng();
            let d = t.dropout(v, 0.5, true, &mut rng)?;
            weighted(t, d, 21)
        },
        &x,
    );
    assert!(e < SMOOTH, "{e}");
}

#[test]
fn gradcheck_spider_contract_all_inputs() {
    let (m, c1, c2, b, k) = (6, 2, 3, 2, 3);
    let mut rng = SeedStream::new(13).rng();
    let idx: Vec<usize> = (0..m)
        .flat_map(|p| {
            let mut row = vec![p];
            row.extend((0..k - 1).map(|_| rng.gen_range(0..m)));
            row
        })
        .collect();
    let table = Arc::new(NeighborTable::new(idx, k));
    let feats = rand_tensor(&[m, c1], 14);
    let filt = rand_tensor(&[m * k, b], 15);
    let step = rand_tensor(&[c2, c1, b, k], 16);
    let build = |which: usize| {
        let (f, g, s, tbl) = (feats.clone(), filt.clone(), step.clone(), table.clone());
        move |t: &mut Tape, v: Var| -> Result<Var> {
            let fv = if which == 0 { v } else { t.constant(f.clone()) };
            let gv = if which == 1 { v } else { t.constant(g.clone()) };
            let sv = if which == 2 { v } else { t.constant(s.clone()) };
            let y = t.spider_contract(fv, gv, sv, tbl.clone())?;
            weighted(t, y, 22)
        }
    };
    for (which, x) in [&feats, &filt, &step].into_iter().enumerate() {
        let e = check(build(which), x);
        assert!(e < SMOOTH, "input {which}: {e}");
    }
}

#[test]
fn batch_norm_train_normalizes() {
    let x = rand_tensor(&[50, 4], 17);
    let mut t = Tape::new();
    let xv = t.constant(x);
    let g = t.constant(Tensor::ones(&[4]));
    let b = t.constant(Tensor::zeros(&[4]));
    let mut s = BatchNormState::new(4);
    let y = t.batch_norm(xv, g, b, &mut s, true).unwrap();
    let d = t.value(y).data();
    for ch in 0..4 {
        let col: Vec<f64> = d.iter().skip(ch).step_by(4).copied().collect();
        let mean = col.iter().sum::<f64>() / 50.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0;
        assert!(mean.abs() < 1e-6, "{mean}");
        assert!((var - 1.0).abs() < 1e-3, "{var}");
    }
    assert!(s.running_var.iter().all(|&v| v != 1.0));
}

#[test]
fn batch_norm_eval_is_affine_in_running_stats() {
    let mut s = BatchNormState::new(2);
    s.running_mean = vec![1.0, -1.0];
    s.running_var = vec![4.0, 0.25];
    let mut t = Tape::new();
    let xv = t.constant(Tensor::matrix(1, 2, vec![3.0, 0.0]).unwrap());
    let g = t.constant(Tensor::vector(vec![2.0, 1.0]));
    let b = t.constant(Tensor::vector(vec![0.5, 0.0]));
    let y = t.batch_norm(xv, g, b, &mut s, false).unwrap();
    let want = [
        2.0 * 2.0 / (4.0 + s.eps).sqrt() + 0.5,
        1.0 / (0.25 + s.eps).sqrt(),
    ];
    for (a, w) in t.value(y).data().iter().zip(want) {
        assert!((a - w).abs() < 1e-12);
    }
    assert_eq!(s.running_mean, vec![1.0, -1.0]);
}

#[test]
fn dropout_identity_cases() {
    let x = rand_tensor(&[3, 3], 18);
    let mut rng = SeedStream::new(1).rng();
    let mut t = Tape::new();
    let v = t.constant(x.clone());
    let a = t.dropout(v, 0.0, true, &mut rng).unwrap();
    let b = t.dropout(v, 0.5, false, &mut rng).unwrap();
    assert_eq!(t.value(a), &x);
    assert_eq!(t.value(b), &x);
    assert!(t.dropout(v, 1.0, true, &mut rng).is_err());
}

#[test]
fn dropout_keep_rate_and_scale() {
    let n = 10_000;
    let rate = 0.5;
    let mut rng = SeedStream::new(2).rng();
    let mut t = Tape::new();
    let v = t.constant(Tensor::ones(&[n]));
    let d = t.dropout(v, rate, true, &mut rng).unwrap();
    let vals = t.value(d).data();
    assert!(vals.iter().all(|&x| x == 0.0 || x == 2.0));
    let kept = vals.iter().filter(|&&x| x != 0.0).count() as f64;
    let sigma = (n as f64 * rate * (1.0 - rate)).sqrt();
    assert!(
        (kept - n as f64 * (1.0 - rate)).abs() < 3.0 * sigma,
        "{kept}"
    );
}

#[test]
fn non_finite_values_are_reported() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::vector(vec![1.0]));
    let b = t.constant(Tensor::vector(vec![f64::INFINITY]));
    let _ = t.mul(a, b).unwrap();
    let (var, _) = t.first_non_finite().unwrap();
    assert_eq!(var, b);
}
