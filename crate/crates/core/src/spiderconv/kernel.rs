//! The multi-channel SpiderConv contraction.
//!
//! For point `p` with ranked neighbors `q_0..q_{K-1}` and precomputed filter
//! values `G[p, j, t]` (one per Taylor term `t`), output channel `i` is
//!
//! ```text
//! out[p, i] = Σ_v Σ_t Σ_j  step[i, v, t, j] · G[p, j, t] · F[q_j, v]
//! ```
//!
//! Each block of rows gathers `X[p, (j, v, t)] = G[p, j, t] · F[q_j, v]` and
//! multiplies it by the step weights, permuted once per call into a
//! `[c2 × (K·c1·b)]` matrix with the same column order.

use crate::linalg::{gemm_serial, MatRef};
use crate::par;
use crate::tensor::Tensor;

/// Rows per work item; fixed so results do not depend on the thread count.
const BLOCK_ROWS: usize = 256;
/// Consecutive blocks whose step gradients share one accumulator.
const STEP_GROUP: usize = 8;

/// Flattened neighbor lists for a batch: row `p` of `indices` holds the
/// batch-global row ids of its `k` neighbors in rank order.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    indices: Vec<usize>,
    k: usize,
}

impl NeighborTable {
    pub fn new(indices: Vec<usize>, k: usize) -> Self {
        assert!(
            k > 0 && indices.len().is_multiple_of(k),
            "neighbor table must be rows × k"
        );
        NeighborTable { indices, k }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rows(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn row(&self, p: usize) -> &[usize] {
        &self.indices[p * self.k..(p + 1) * self.k]
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

#[derive(Clone, Copy)]
struct Dims {
    c1: usize,
    c2: usize,
    b: usize,
    k: usize,
}

impl Dims {
    fn cols(self) -> usize {
        self.c1 * self.b * self.k
    }
}

fn dims(features: &Tensor, filters: &Tensor, step: &Tensor, table: &NeighborTable) -> Dims {
    let c1 = features.shape()[1];
    let b = filters.shape()[1];
    let s = step.shape();
    debug_assert_eq!(filters.shape()[0], table.rows() * table.k());
    Dims {
        c1,
        c2: s[0],
        b,
        k: table.k(),
    }
}

/// `[c2, c1, b, K]` to `[c2, K, c1, b]`.
fn permute_step(step: &[f64], dm: Dims) -> Vec<f64> {
    let Dims { c1, c2, b, k } = dm;
    let mut out = vec![0.0; step.len()];
    for i in 0..c2 {
        for v in 0..c1 {
            for t in 0..b {
                let src = ((i * c1 + v) * b + t) * k;
                for j in 0..k {
                    out[((i * k + j) * c1 + v) * b + t] = step[src + j];
                }
            }
        }
    }
    out
}

/// `[c2, K, c1, b]` back to `[c2, c1, b, K]`.
fn unpermute_step(perm: &[f64], dm: Dims) -> Vec<f64> {
    let Dims { c1, c2, b, k } = dm;
    let mut out = vec![0.0; perm.len()];
    for i in 0..c2 {
        for j in 0..k {
            for v in 0..c1 {
                let src = ((i * k + j) * c1 + v) * b;
                for t in 0..b {
                    out[((i * c1 + v) * b + t) * k + j] = perm[src + t];
                }
            }
        }
    }
    out
}

fn gather_block(
    features: &[f64],
    filters: &[f64],
    table: &NeighborTable,
    dm: Dims,
    first_row: usize,
    rows: usize,
    x: &mut [f64],
) {
    let Dims { c1, b, k, .. } = dm;
    let cols = dm.cols();
    for r in 0..rows {
        let p = first_row + r;
        let xr = &mut x[r * cols..(r + 1) * cols];
        for (j, &q) in table.row(p).iter().enumerate() {
            let fq = &features[q * c1..(q + 1) * c1];
            let g = &filters[(p * k + j) * b..(p * k + j + 1) * b];
            let xj = &mut xr[j * c1 * b..(j + 1) * c1 * b];
            for (xv, &fv) in xj.chunks_exact_mut(b).zip(fq) {
                for (x, &gt) in xv.iter_mut().zip(g) {
                    *x = gt * fv;
                }
            }
        }
    }
}

/// `[M × c1]` features, `[M·K × b]` filter values, `[c2, c1, b, K]` step weights.
pub fn forward(
    features: &Tensor,
    filters: &Tensor,
    step: &Tensor,
    table: &NeighborTable,
) -> Tensor {
    let dm = dims(features, filters, step, table);
    let m = table.rows();
    let cols = dm.cols();
    let mut out = vec![0.0; m * dm.c2];
    let perm = permute_step(step.data(), dm);
    let w = MatRef::new(&perm, dm.c2, cols).t();
    par::for_each_chunk_mut(&mut out, BLOCK_ROWS * dm.c2, |bi, oc| {
        let rows = oc.len() / dm.c2;
        let first = bi * BLOCK_ROWS;
        let mut x = vec![0.0; rows * cols];
        gather_block(
            features.data(),
            filters.data(),
            table,
            dm,
            first,
            rows,
            &mut x,
        );
        gemm_serial(MatRef::new(&x, rows, cols), w, 0.0, oc);
    });
    Tensor::from_parts(vec![m, dm.c2], out)
}

#[derive(Debug, Clone, Copy)]
pub struct Wanted {
    pub features: bool,
    pub filters: bool,
    pub step: bool,
}

#[derive(Debug, Default)]
pub struct ContractGrads {
    pub features: Option<Tensor>,
    pub filters: Option<Tensor>,
    pub step: Option<Tensor>,
}

#[derive(Default)]
struct GroupGrads {
    /// `[rows × K × c1]`, scattered into the feature gradient afterwards.
    feature_contrib: Vec<f64>,
    filters: Vec<f64>,
    /// Permuted step gradient summed over the group's blocks.
    step: Vec<f64>,
}

pub fn backward(
    features: &Tensor,
    filters: &Tensor,
    step: &Tensor,
    table: &NeighborTable,
    grad_out: &Tensor,
    wanted: Wanted,
) -> ContractGrads {
    let dm = dims(features, filters, step, table);
    let Dims { c1, c2, b, k } = dm;
    let m = table.rows();
    let cols = dm.cols();
    let group_rows = BLOCK_ROWS * STEP_GROUP;
    let n_groups = m.div_ceil(group_rows);
    let (fd, gd, go) = (features.data(), filters.data(), grad_out.data());
    let perm = permute_step(step.data(), dm);

    let groups = par::map_range(n_groups, |gi| {
        let group_first = gi * group_rows;
        let group_end = m.min(group_first + group_rows);
        let mut out = GroupGrads::default();
        if wanted.features {
            out.feature_contrib = vec![0.0; (group_end - group_first) * k * c1];
        }
        if wanted.filters {
            out.filters = vec![0.0; (group_end - group_first) * k * b];
        }
        if wanted.step {
            out.step = vec![0.0; c2 * cols];
        }
        let mut buf = Vec::new();
        for first in (group_first..group_end).step_by(BLOCK_ROWS) {
            let rows = BLOCK_ROWS.min(group_end - first);
            let g_blk = MatRef::new(&go[first * c2..(first + rows) * c2], rows, c2);
            buf.clear();
            buf.resize(rows * cols, 0.0);
            if wanted.features || wanted.filters {
                gemm_serial(g_blk, MatRef::new(&perm, c2, cols), 0.0, &mut buf);
                for r in 0..rows {
                    let p = first + r;
                    let local = p - group_first;
                    let dxr = &buf[r * cols..(r + 1) * cols];
                    for (j, &q) in table.row(p).iter().enumerate() {
                        let fq = &fd[q * c1..(q + 1) * c1];
                        let g = &gd[(p * k + j) * b..(p * k + j + 1) * b];
                        let dxj = &dxr[j * c1 * b..(j + 1) * c1 * b];
                        if wanted.features {
                            let dst = &mut out.feature_contrib
                                [(local * k + j) * c1..(local * k + j + 1) * c1];
                            for (d, dxv) in dst.iter_mut().zip(dxj.chunks_exact(b)) {
                                *d = dxv.iter().zip(g).map(|(x, y)| x * y).sum();
                            }
                        }
                        if wanted.filters {
                            let dst =
                                &mut out.filters[(local * k + j) * b..(local * k + j + 1) * b];
                            for (dxv, &fv) in dxj.chunks_exact(b).zip(fq) {
                                for (d, x) in dst.iter_mut().zip(dxv) {
                                    *d += x * fv;
                                }
                            }
                        }
                    }
                }
            }
            if wanted.step {
                gather_block(fd, gd, table, dm, first, rows, &mut buf);
                gemm_serial(g_blk.t(), MatRef::new(&buf, rows, cols), 1.0, &mut out.step);
            }
        }
        out
    });

    let mut res = ContractGrads::default();
    if wanted.features {
        let mut df = vec![0.0; m * c1];
        for (gi, grp) in groups.iter().enumerate() {
            let first = gi * group_rows;
            for (r, contrib) in grp.feature_contrib.chunks(k * c1).enumerate() {
                for (j, &q) in table.row(first + r).iter().enumerate() {
                    let src = &contrib[j * c1..(j + 1) * c1];
                    for (d, s) in df[q * c1..(q + 1) * c1].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
        res.features = Some(Tensor::from_parts(features.shape().to_vec(), df));
    }
    if wanted.filters {
        let dg: Vec<f64> = groups
            .iter()
            .flat_map(|g| g.filters.iter().copied())
            .collect();
        res.filters = Some(Tensor::from_parts(filters.shape().to_vec(), dg));
    }
    if wanted.step {
        let mut dw = vec![0.0; c2 * cols];
        for grp in &groups {
            for (d, s) in dw.iter_mut().zip(&grp.step) {
                *d += s;
            }
        }
        res.step = Some(Tensor::from_parts(
            step.shape().to_vec(),
            unpermute_step(&dw, dm),
        ));
    }
    res
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_permutation_round_trips() {
        let dm = Dims {
            c1: 3,
            c2: 2,
            b: 4,
            k: 5,
        };
        let w: Vec<f64> = (0..dm.c2 * dm.cols()).map(|i| i as f64).collect();
        assert_eq!(unpermute_step(&permute_step(&w, dm), dm), w);
        let p = permute_step(&w, dm);
        // step[i, v, t, j] lands at [i, j, v, t].
        let (i, v, t, j) = (1, 2, 3, 4);
        assert_eq!(
            p[((i * 5 + j) * 3 + v) * 4 + t],
            w[((i * 3 + v) * 4 + t) * 5 + j]
        );
    }
}
