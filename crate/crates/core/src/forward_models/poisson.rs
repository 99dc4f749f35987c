//! Bayesian calibration problem for the generalized Poisson model.
//!
//! The latent field coefficients get a standard Gaussian prior; the
//! likelihood is Gaussian around the forward solution on the output face
//! with per-node variances `(1e-2 |y_j| + 1e-2)^2`.

use super::fem::poisson_solve;
use super::field::FieldExpansion;
use super::mesh::PoissonMesh;
use super::ProbabilisticModel;
use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const LN_2PI: f64 = 1.8378770664093453;

/// True coefficient field: a Gaussian bump of height 20 centered at
/// `(0, 0.2, 0.2)`, evaluated at the element centers.
pub fn ground_truth_field(mesh: &PoissonMesh) -> Vec<f64> {
    mesh.element_centers
        .iter()
        .map(|c| {
            let r2 = c[0] * c[0] + (c[1] - 0.2).powi(2) + (c[2] - 0.2).powi(2);
            20.0 * (-4.0 * r2).exp()
        })
        .collect()
}

/// Face solution for the ground-truth coefficient field.
pub fn true_solution(mesh: &PoissonMesh) -> Result<Vec<f64>> {
    poisson_solve(mesh, &ground_truth_field(mesh))
}

/// Noisy observations `y = u_true + 1e-3 * mean(u_true) * xi` with
/// standard-normal `xi` per node.
pub fn generate_observations<R: Rng + ?Sized>(mesh: &PoissonMesh, rng: &mut R) -> Result<Vec<f64>> {
    let u_true = true_solution(mesh)?;
    let u_bar = u_true.iter().sum::<f64>() / u_true.len() as f64;
    Ok(u_true
        .iter()
        .map(|u| {
            let xi: f64 = StandardNormal.sample(rng);
            u + 1e-3 * u_bar * xi
        })
        .collect())
}

/// Likelihood covariance diagonal `(1e-2 |y_j| + 1e-2)^2`.
pub fn likelihood_cov_diag(y_obs: &[f64]) -> Vec<f64> {
    y_obs
        .iter()
        .map(|y| (1e-2 * y.abs() + 1e-2).powi(2))
        .collect()
}

/// The calibration problem as a black-box probabilistic model.
#[derive(Debug, Clone)]
pub struct PoissonProblem {
    pub mesh: PoissonMesh,
    pub expansion: FieldExpansion,
    pub y_obs: Vec<f64>,
    cov_diag: Vec<f64>,
}

impl PoissonProblem {
    pub fn new(mesh: PoissonMesh, expansion: FieldExpansion, y_obs: Vec<f64>) -> Result<Self> {
        if expansion.n_centers() != mesh.num_elements() {
            return Err(Error::input(
                "expansion centers do not match mesh element count",
            ));
        }
        if y_obs.len() != mesh.face_nodes.len() {
            return Err(Error::input(format!(
                "{} observations for {} output nodes",
                y_obs.len(),
                mesh.face_nodes.len()
            )));
        }
        let cov_diag = likelihood_cov_diag(&y_obs);
        Ok(PoissonProblem {
            mesh,
            expansion,
            y_obs,
            cov_diag,
        })
    }

    /// Forward response `M(theta)`: face solution for the field realized
    /// from `theta`.
    pub fn forward(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let (zeta, _) = self.expansion.field_from_theta(theta)?;
        poisson_solve(&self.mesh, &zeta)
    }

    fn log_likelihood_inner(&self, theta: &[f64]) -> Result<f64> {
        let prediction = self.forward(theta)?;
        let mut acc = 0.0;
        for ((p, y), c) in prediction.iter().zip(&self.y_obs).zip(&self.cov_diag) {
            acc += -0.5 * (LN_2PI + c.ln()) - 0.5 * (p - y).powi(2) / c;
        }
        Ok(acc)
    }

    pub fn log_likelihood(&self, theta: &[f64]) -> f64 {
        self.log_likelihood_inner(theta).unwrap_or(f64::NEG_INFINITY)
    }

    pub fn log_prior(&self, theta: &[f64]) -> f64 {
        theta.iter().map(|t| -0.5 * (LN_2PI + t * t)).sum()
    }
}

impl ProbabilisticModel for PoissonProblem {
    fn dim(&self) -> usize {
        self.expansion.n_terms()
    }

    fn log_joint(&self, theta: &[f64]) -> f64 {
        if theta.len() != self.dim() {
            return f64::NAN;
        }
        self.log_likelihood(theta) + self.log_prior(theta)
    }
}
