//! Analytic Gaussian density-matching target.

use super::ProbabilisticModel;
use crate::error::{Error, Result};
use crate::variational::{MeanFieldGaussian, VariationalParams};

const LN_2PI: f64 = 1.8378770664093453;

/// Diagonal Gaussian target. Its log density plays the role of the
/// log-joint, so the match can be made exact by the mean-field family.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    pub mean: Vec<f64>,
    pub cov_diag: Vec<f64>,
}

impl GaussianTarget {
    pub fn new(mean: Vec<f64>, cov_diag: Vec<f64>) -> Result<Self> {
        if mean.len() != cov_diag.len() {
            return Err(Error::input("mean and covariance dimensions differ"));
        }
        if cov_diag.iter().any(|c| *c <= 0.0 || !c.is_finite()) {
            return Err(Error::input("covariance diagonal must be positive"));
        }
        Ok(GaussianTarget { mean, cov_diag })
    }

    /// The benchmark target: zero mean, covariance `0.1 I`.
    pub fn benchmark(dim: usize) -> Self {
        GaussianTarget {
            mean: vec![0.0; dim],
            cov_diag: vec![0.1; dim],
        }
    }

    /// Mean-field parameters matching the target exactly.
    pub fn optimal_variational(&self) -> VariationalParams {
        VariationalParams::MeanField(MeanFieldGaussian {
            mean: self.mean.clone(),
            log_std: self.cov_diag.iter().map(|c| 0.5 * c.ln()).collect(),
        })
    }
}

impl ProbabilisticModel for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_joint(&self, theta: &[f64]) -> f64 {
        if theta.len() != self.mean.len() {
            return f64::NAN;
        }
        theta
            .iter()
            .zip(&self.mean)
            .zip(&self.cov_diag)
            .map(|((t, m), c)| -0.5 * (LN_2PI + c.ln()) - 0.5 * (t - m).powi(2) / c)
            .sum()
    }
}
