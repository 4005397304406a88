use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Running statistics for one batch-norm layer.
///
/// Train mode normalizes with the batch's own per-channel mean and (biased)
/// variance, then folds them into the running values as
/// `running = momentum·running + (1 − momentum)·batch`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub const DEFAULT_MOMENTUM: f64 = 0.5;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

impl Tape {
    /// Batch norm over the rows of an `[M × C]` input with learned `gamma`/`beta`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState,
        train: bool,
    ) -> Result<Var> {
        let (m, c) = self.value(x).dims2()?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || state.channels() != c {
            return Err(Error::shape(
                "batch-norm",
                format!(
                    "input {:?}, gamma {:?}, beta {:?}, state {}",
                    self.shape(x),
                    self.shape(gamma),
                    self.shape(beta),
                    state.channels()
                ),
            ));
        }
        let d = self.value(x).data();
        let (mean, var) = if train {
            let mut mean = vec![0.0; c];
            for row in d.chunks(c) {
                for (acc, v) in mean.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            mean.iter_mut().for_each(|v| *v /= m as f64);
            let mut var = vec![0.0; c];
            for row in d.chunks(c) {
                for ((acc, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                    *acc += (v - mu) * (v - mu);
                }
            }
            var.iter_mut().for_each(|v| *v /= m as f64);
            (mean, var)
        } else {
            (state.running_mean.clone(), state.running_var.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
        let gm = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; m * c];
        let mut out = vec![0.0; m * c];
        for r in 0..m {
            for k in 0..c {
                let i = r * c + k;
                xhat[i] = (d[i] - mean[k]) * inv_std[k];
                out[i] = gm[k] * xhat[i] + bt[k];
            }
        }
        if train {
            let mo = state.momentum;
            for k in 0..c {
                state.running_mean[k] = mo * state.running_mean[k] + (1.0 - mo) * mean[k];
                state.running_var[k] = mo * state.running_var[k] + (1.0 - mo) * var[k];
            }
        }
        let rg = self.needs_grad(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::from_parts(vec![m, c], out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            rg,
        ))
    }
}

pub(super) fn backward(
    x: &Tensor,
    gamma: &Tensor,
    xhat: &[f64],
    inv_std: &[f64],
    train: bool,
    g: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (m, c) = x.dims2()?;
    let gd = g.data();
    let gm = gamma.data();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for r in 0..m {
        for k in 0..c {
            let i = r * c + k;
            dgamma[k] += gd[i] * xhat[i];
            dbeta[k] += gd[i];
        }
    }
    let mut dx = vec![0.0; m * c];
    if train {
        // dx = inv_std/M · (M·dxhat − Σdxhat − xhat·Σ(dxhat·xhat)), dxhat = g·gamma
        let mf = m as f64;
        for r in 0..m {
            for k in 0..c {
                let i = r * c + k;
                let sum_dxhat = dbeta[k] * gm[k];
                let sum_dxhat_xhat = dgamma[k] * gm[k];
                dx[i] =
                    inv_std[k] / mf * (mf * gd[i] * gm[k] - sum_dxhat - xhat[i] * sum_dxhat_xhat);
            }
        }
    } else {
        for r in 0..m {
            for k in 0..c {
                let i = r * c + k;
                dx[i] = gd[i] * gm[k] * inv_std[k];
            }
        }
    }
    Ok((
        Tensor::from_parts(vec![m, c], dx),
        Tensor::from_parts(vec![c], dgamma),
        Tensor::from_parts(vec![c], dbeta),
    ))
}
