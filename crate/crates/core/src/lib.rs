//! Black-box variational inference with adaptive batch-sized regulated
//! importance sampling (ABRIS).
//!
//! The crate is organized around the inference loop: a [`variational`]
//! family supplies densities, samples and score functions; [`estimators`]
//! turns stored forward-model evaluations into ELBO gradient estimates via
//! importance sampling with a mixture proposal; [`driver`] runs the outer
//! optimization loop and the inner sampling loop that decides when new
//! forward-model batches are required; [`optimizer`] applies the update
//! pipeline (regularization, natural-gradient preconditioning, clipping,
//! Adam). [`forward_models`] provides the benchmark targets (an analytic
//! Gaussian and a generalized Poisson FEM calibration problem),
//! [`baselines`] provides Metropolis-Hastings and adaptive-tempering SMC
//! for comparison, [`metrics`] the error measures, and [`harness`] the
//! experiment configuration, batch evaluation and result persistence used
//! by the CLI.

pub mod baselines;
pub mod driver;
pub mod error;
pub mod estimators;
pub mod forward_models;
pub mod harness;
pub mod metrics;
pub mod optimizer;
pub mod rng;
pub mod variational;

pub use driver::{AbrisConfig, ConvergenceRule, IterationRecord, RunResult, RunStatus};
pub use error::{Error, Result};
pub use estimators::{EvaluationBatch, EvaluationSets, GradientEstimate, IsWeights, NormMatrix};
pub use forward_models::ProbabilisticModel;
pub use harness::{BatchEvaluator, CallCounter};
pub use optimizer::{AdamParams, DampingSchedule, LrSchedule, OptimizerConfig, OptimizerState};
pub use variational::{FamilySpec, GaussianMixture, MeanFieldGaussian, VariationalParams};
