//! MLP filters as a drop-in replacement for the Taylor family.

use rand::Rng as _;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// A small ReLU MLP mapping an offset `d ∈ R³` to `outputs` filter values.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpFilter {
    pub hidden: Vec<usize>,
    /// `(weight [in × out], bias [out])` per layer.
    pub layers: Vec<(Tensor, Tensor)>,
}

impl MlpFilter {
    pub fn init(hidden: &[usize], outputs: usize, rng: &mut Rng) -> Self {
        let mut sizes = vec![3];
        sizes.extend_from_slice(hidden);
        sizes.push(outputs);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = (6.0 / w[0] as f64).sqrt();
                let weight = (0..w[0] * w[1])
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect();
                (
                    Tensor::from_parts(vec![w[0], w[1]], weight),
                    Tensor::zeros(&[w[1]]),
                )
            })
            .collect();
        MlpFilter {
            hidden: hidden.to_vec(),
            layers,
        }
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, |(w, _)| w.shape()[1])
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|(w, b)| w.len() + b.len()).sum()
    }

    /// All filter outputs at `d`.
    pub fn eval(&self, d: [f64; 3]) -> Result<Vec<f64>> {
        check_layers(&self.hidden, &self.layers)?;
        let mut h = d.to_vec();
        let last = self.layers.len() - 1;
        for (li, (w, b)) in self.layers.iter().enumerate() {
            let (rows, cols) = w.dims2()?;
            let mut next = b.data().to_vec();
            for (r, hv) in h.iter().enumerate().take(rows) {
                for (c, acc) in next.iter_mut().enumerate() {
                    *acc += hv * w.data()[r * cols + c];
                }
            }
            if li < last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = next;
        }
        Ok(h)
    }
}

fn check_layers(hidden: &[usize], layers: &[(Tensor, Tensor)]) -> Result<()> {
    if layers.len() != hidden.len() + 1 {
        return Err(Error::shape(
            "mlp-filter",
            format!(
                "{} hidden sizes need {} layers, got {}",
                hidden.len(),
                hidden.len() + 1,
                layers.len()
            ),
        ));
    }
    let mut fan_in = 3;
    for (li, (w, b)) in layers.iter().enumerate() {
        let (rows, cols) = w.dims2()?;
        let expect_cols = hidden.get(li).copied().unwrap_or(cols);
        if rows != fan_in || cols != expect_cols || b.shape() != [cols] {
            return Err(Error::shape(
                "mlp-filter",
                format!(
                    "layer {li}: weight {:?}, bias {:?}, expected {fan_in} inputs",
                    w.shape(),
                    b.shape()
                ),
            ));
        }
        fan_in = cols;
    }
    Ok(())
}

/// Scalar MLP filter value at `d`; the last layer must have a single output.
pub fn mlp_filter_eval(
    hidden_sizes: &[usize],
    layers: &[(Tensor, Tensor)],
    d: [f64; 3],
) -> Result<f64> {
    let filter = MlpFilter {
        hidden: hidden_sizes.to_vec(),
        layers: layers.to_vec(),
    };
    let out = filter.eval(d)?;
    match out[..] {
        [v] => Ok(v),
        _ => Err(Error::shape(
            "mlp-filter",
            format!("expected 1 output, got {}", out.len()),
        )),
    }
}

/// Filter values for every offset row of `offsets` `[R × 3]`, giving `[R × outputs]`.
pub fn mlp_filter_values(tape: &mut Tape, offsets: Var, layers: &[(Var, Var)]) -> Result<Var> {
    let mut h = offsets;
    for (li, &(w, b)) in layers.iter().enumerate() {
        h = tape.matmul(h, w)?;
        h = tape.add(h, b)?;
        if li + 1 < layers.len() {
            h = tape.relu(h);
        }
    }
    Ok(h)
}
