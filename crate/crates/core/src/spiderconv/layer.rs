use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::kernel::{self, NeighborTable};
use super::taylor::{TaylorBasis, TaylorCoeffs, NUM_MONOMIALS};
use crate::autodiff::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::NeighborIndex;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpiderConvShape {
    pub c1: usize,
    pub c2: usize,
    /// Taylor terms.
    pub b: usize,
    /// Neighbors per point, self included.
    pub k: usize,
}

impl SpiderConvShape {
    pub fn step_count(&self) -> usize {
        self.c2 * self.c1 * self.b * self.k
    }

    pub fn taylor_count(&self) -> usize {
        NUM_MONOMIALS * self.b
    }
}

/// Weights of one SpiderConv layer with shared Taylor filters.
#[derive(Debug, Clone, PartialEq)]
pub struct SpiderConvParams {
    pub shape: SpiderConvShape,
    /// `[20 × b]`: column `t` holds Taylor term `t`'s coefficients.
    pub taylor: Tensor,
    /// `[c2, c1, b, K]`, indexed by neighbor rank in the last axis.
    pub step: Tensor,
    pub bias: Option<Tensor>,
}

impl SpiderConvParams {
    /// Taylor coefficients start near a constant filter (constant term 1,
    /// others `Normal(0, 0.1)`), step weights `Uniform(±sqrt(1/(c1·K·b)))`,
    /// bias zero. Coefficients outside `basis` are zero.
    pub fn init(shape: SpiderConvShape, basis: TaylorBasis, bias: bool, rng: &mut Rng) -> Self {
        let SpiderConvShape { c1, c2, b, k } = shape;
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        let mask = basis.mask();
        let mut taylor = vec![0.0; NUM_MONOMIALS * b];
        for m in 0..NUM_MONOMIALS {
            for t in 0..b {
                taylor[m * b + t] = if m == 0 {
                    1.0
                } else if mask[m] == 1.0 {
                    normal.sample(rng)
                } else {
                    0.0
                };
            }
        }
        let bound = (1.0 / (c1 * k * b) as f64).sqrt();
        let step = (0..shape.step_count())
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        SpiderConvParams {
            shape,
            taylor: Tensor::from_parts(vec![NUM_MONOMIALS, b], taylor),
            step: Tensor::from_parts(vec![c2, c1, b, k], step),
            bias: bias.then(|| Tensor::zeros(&[c2])),
        }
    }

    pub fn param_count(&self) -> usize {
        self.shape.step_count()
            + self.shape.taylor_count()
            + self.bias.as_ref().map_or(0, Tensor::len)
    }

    pub fn taylor_coeffs(&self, t: usize) -> TaylorCoeffs {
        let b = self.shape.b;
        let mut w = [0.0; NUM_MONOMIALS];
        for (m, slot) in w.iter_mut().enumerate() {
            *slot = self.taylor.data()[m * b + t];
        }
        TaylorCoeffs(w)
    }

    /// Rank-indexed step weights for output `i`, input `v`, Taylor term `t`.
    pub fn step_weights(&self, i: usize, v: usize, t: usize) -> &[f64] {
        let SpiderConvShape { c1, b, k, .. } = self.shape;
        let start = ((i * c1 + v) * b + t) * k;
        &self.step.data()[start..start + k]
    }
}

/// Taylor features of every neighbor offset, `[rows·K × 20]`.
pub fn taylor_feature_matrix(offsets: &[[f64; 3]], basis: TaylorBasis) -> Tensor {
    let mut data = Vec::with_capacity(offsets.len() * NUM_MONOMIALS);
    for &d in offsets {
        data.extend_from_slice(&basis.features(d));
    }
    Tensor::from_parts(vec![offsets.len(), NUM_MONOMIALS], data)
}

impl Tape {
    /// Records the SpiderConv contraction of `features` `[M × c1]` with
    /// per-neighbor filter values `filters` `[M·K × b]` and rank-indexed
    /// `step` weights `[c2, c1, b, K]`.
    pub fn spider_contract(
        &mut self,
        features: Var,
        filters: Var,
        step: Var,
        neighbors: Arc<NeighborTable>,
    ) -> Result<Var> {
        let (m, c1) = self.value(features).dims2()?;
        let (mk, b) = self.value(filters).dims2()?;
        let s = self.shape(step);
        let k = neighbors.k();
        let ok = neighbors.rows() == m
            && mk == m * k
            && s.len() == 4
            && s[1] == c1
            && s[2] == b
            && s[3] == k
            && neighbors.indices().iter().all(|&q| q < m);
        if !ok {
            return Err(Error::shape(
                "spiderconv",
                format!(
                    "features {:?}, filters {:?}, step {:?}, neighbors {}×{}",
                    self.shape(features),
                    self.shape(filters),
                    s,
                    neighbors.rows(),
                    k
                ),
            ));
        }
        let out = kernel::forward(
            self.value(features),
            self.value(filters),
            self.value(step),
            &neighbors,
        );
        let rg = self.needs_grad(&[features, filters, step]);
        Ok(self.push(
            out,
            Op::SpiderContract {
                features,
                filters,
                step,
                neighbors,
            },
            rg,
        ))
    }
}

/// One SpiderConv layer on a single cloud: `[N × c1]` features to `[N × c2]`.
///
/// Filter arguments are the neighbor offsets `q_j − p` stored in `index`.
pub fn spiderconv_forward(
    features: &Tensor,
    index: &NeighborIndex,
    params: &SpiderConvParams,
) -> Result<Tensor> {
    let (n, c1) = features.dims2()?;
    if index.len() != n || index.k() != params.shape.k || c1 != params.shape.c1 {
        return Err(Error::shape(
            "spiderconv",
            format!(
                "features {:?}, index {}×{}, layer {:?}",
                features.shape(),
                index.len(),
                index.k(),
                params.shape
            ),
        ));
    }
    let mut tape = Tape::new();
    let f = tape.constant(features.clone());
    let feats = tape.constant(taylor_feature_matrix(index.offsets(), TaylorBasis::Order3));
    let taylor = tape.constant(params.taylor.clone());
    let g = tape.matmul(feats, taylor)?;
    let step = tape.constant(params.step.clone());
    let table = Arc::new(NeighborTable::new(index.indices().to_vec(), index.k()));
    let mut out = tape.spider_contract(f, g, step, table)?;
    if let Some(bias) = &params.bias {
        let bv = tape.constant(bias.clone());
        out = tape.add(out, bv)?;
    }
    Ok(tape.value(out).clone())
}
