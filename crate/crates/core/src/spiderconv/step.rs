use crate::error::{Error, Result};

/// Piecewise-constant radial filter: `weights[i]` on `radii[i] <= |d| < radii[i+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    radii: Vec<f64>,
    weights: Vec<f64>,
}

impl StepFunction {
    pub fn new(radii: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || radii.len() != weights.len() + 1 {
            return Err(Error::invalid(format!(
                "step function needs {} radii for {} weights, got {}",
                weights.len() + 1,
                weights.len(),
                radii.len()
            )));
        }
        if radii[0] != 0.0 || radii.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(
                "step radii must start at 0 and strictly increase",
            ));
        }
        Ok(StepFunction { radii, weights })
    }

    /// Buckets of equal width `support / n`.
    pub fn uniform(weights: Vec<f64>, support: f64) -> Result<Self> {
        let n = weights.len();
        let radii = (0..=n).map(|i| support * i as f64 / n as f64).collect();
        Self::new(radii, weights)
    }

    pub fn support(&self) -> f64 {
        *self.radii.last().expect("non-empty radii")
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn eval(&self, d: [f64; 3]) -> Result<f64> {
        let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if r >= self.support() {
            return Err(Error::OutsideSupport {
                radius: r,
                support: self.support(),
            });
        }
        // Last i with radii[i] <= r.
        let i = self.radii.partition_point(|&ri| ri <= r) - 1;
        Ok(self.weights[i])
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        StepFunction {
            radii: self.radii.clone(),
            weights: self.weights.iter().map(|w| w * alpha).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eighths() -> StepFunction {
        let w = (0..8).map(|i| (i as f64 + 1.0) / 8.0).collect();
        StepFunction::uniform(w, 1.0).unwrap()
    }

    #[test]
    fn eighths_staircase_values() {
        let s = eighths();
        assert_eq!(s.eval([0.3, 0.0, 0.0]).unwrap(), 3.0 / 8.0);
        assert_eq!(s.eval([0.0; 3]).unwrap(), 1.0 / 8.0);
        assert_eq!(s.eval([0.0, 0.5, 0.0]).unwrap(), 5.0 / 8.0);
    }

    #[test]
    fn outside_support_is_error() {
        assert!(matches!(
            eighths().eval([1.0, 0.0, 0.0]),
            Err(Error::OutsideSupport { .. })
        ));
    }

    #[test]
    fn constant_weights() {
        let s = StepFunction::uniform(vec![0.7; 5], 2.0).unwrap();
        for d in [[0.1, 0.2, 0.3], [1.0, 1.0, 0.5], [0.0, 0.0, 1.99]] {
            assert_eq!(s.eval(d).unwrap(), 0.7);
        }
    }

    #[test]
    fn radii_validation() {
        assert!(StepFunction::new(vec![0.1, 0.5], vec![1.0]).is_err());
        assert!(StepFunction::new(vec![0.0, 0.5, 0.5], vec![1.0, 2.0]).is_err());
        assert!(StepFunction::new(vec![0.0, 0.5], vec![1.0, 2.0]).is_err());
    }
}
