use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(
                "adam",
                format!("{} parameters, {} gradients", params.len(), grads.len()),
            ));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.v = self.m.clone();
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.m.get(i).map(Tensor::shape) != Some(p.shape()) {
                return Err(Error::shape(
                    "adam",
                    format!("parameter {i}: {:?} vs gradient {:?}", p.shape(), g.shape()),
                ));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut adam = Adam::new(1e-3);
        let mut p = vec![Tensor::scalar(0.0)];
        adam.step(&mut p, &[Tensor::scalar(1.0)]).unwrap();
        // mhat = 1, vhat = 1, so Δ = -lr / (1 + eps).
        let want = -1e-3 / (1.0 + 1e-8);
        assert!((p[0].data()[0] - want).abs() < 1e-15);
        assert!((p[0].data()[0] + 1e-3).abs() < 1e-9);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut adam = Adam::new(1e-3);
        let init = Tensor::vector(vec![0.5, -2.0, 3.25]);
        let mut p = vec![init.clone()];
        for _ in 0..10 {
            adam.step(&mut p, &[Tensor::zeros(&[3])]).unwrap();
        }
        assert_eq!(p[0], init);
    }

    #[test]
    fn shape_mismatch() {
        let mut adam = Adam::new(1e-3);
        let mut p = vec![Tensor::zeros(&[2])];
        assert!(adam.step(&mut p, &[Tensor::zeros(&[3])]).is_err());
        assert!(adam.step(&mut p, &[]).is_err());
    }
}
