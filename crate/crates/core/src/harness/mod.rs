//! Experiment configuration, orchestration and persistence.

pub mod batch;

pub use batch::{batch_evaluate, BatchEvaluator, CallCounter};
