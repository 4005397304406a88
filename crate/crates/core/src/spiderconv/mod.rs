//! Parameterized point-set convolution with filters `g = g_step · g_taylor`.

pub mod export;
pub mod kernel;
mod layer;
mod mlp;
mod step;
mod taylor;

pub use kernel::NeighborTable;
pub use layer::{spiderconv_forward, taylor_feature_matrix, SpiderConvParams, SpiderConvShape};
pub use mlp::{mlp_filter_eval, mlp_filter_values, MlpFilter};
pub use step::StepFunction;
pub use taylor::{
    taylor_features, trilinear_coeffs, TaylorBasis, TaylorCoeffs, MONOMIAL_NAMES, NUM_MONOMIALS,
};

/// Exact (unapproximated) filter value `g_step(d) · g_taylor(d)`.
pub fn exact_filter(step: &StepFunction, taylor: &TaylorCoeffs, d: [f64; 3]) -> crate::Result<f64> {
    Ok(step.eval(d)? * taylor.eval(d))
}
