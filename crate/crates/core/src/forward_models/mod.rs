//! Benchmark probabilistic models.
//!
//! A forward model is a black box: the toolkit only ever asks for
//! `ln pi(y_obs, theta)` at given parameter values, never for gradients.
//! Non-finite return values signal failed evaluations.

pub mod fem;
pub mod field;
pub mod gaussian;
pub mod mesh;
pub mod poisson;
pub mod tables;
pub mod transforms;

pub use fem::{assemble_stiffness, poisson_solve, poisson_solve_full};
pub use field::{se_kernel_basis, FieldExpansion};
pub use gaussian::GaussianTarget;
pub use mesh::PoissonMesh;
pub use poisson::{generate_observations, ground_truth_field, true_solution, PoissonProblem};
pub use transforms::{discrete_transform, tanh_transform};

/// Black-box map from latent parameters to the log joint density,
/// evaluable in batches. One call to [`ProbabilisticModel::log_joint`]
/// is one model call.
pub trait ProbabilisticModel: Sync {
    fn dim(&self) -> usize;

    /// `ln pi(y_obs, theta)`. Non-finite values mark failed evaluations;
    /// callers reject and redraw the sample.
    fn log_joint(&self, theta: &[f64]) -> f64;
}

impl<M: ProbabilisticModel + ?Sized> ProbabilisticModel for &M {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn log_joint(&self, theta: &[f64]) -> f64 {
        (**self).log_joint(theta)
    }
}
