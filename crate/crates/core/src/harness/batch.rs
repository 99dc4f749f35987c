//! Bounded-concurrency batch evaluation of forward models.

use crate::error::{Error, Result};
use crate::forward_models::ProbabilisticModel;
use rayon::prelude::*;
use std::sync::atomic::{AtomicUsize, Ordering};

/// Evaluates batches of parameter rows with at most `limit` concurrent
/// model calls. Results come back in input order, so a deterministic
/// model gives bit-identical output regardless of the limit.
#[derive(Debug)]
pub struct BatchEvaluator {
    pool: Option<rayon::ThreadPool>,
    limit: usize,
}

impl BatchEvaluator {
    pub fn new(limit: usize) -> Result<Self> {
        if limit == 0 {
            return Err(Error::input("parallelism limit must be at least 1"));
        }
        let pool = if limit == 1 {
            None
        } else {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(limit)
                    .build()
                    .map_err(|e| Error::state(format!("thread pool: {e}")))?,
            )
        };
        Ok(BatchEvaluator { pool, limit })
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    /// Evaluate every row; non-finite values pass through for the caller
    /// to handle.
    pub fn evaluate(&self, model: &dyn ProbabilisticModel, thetas: &[Vec<f64>]) -> Vec<f64> {
        match &self.pool {
            None => thetas.iter().map(|t| model.log_joint(t)).collect(),
            Some(pool) => pool.install(|| {
                thetas.par_iter().map(|t| model.log_joint(t)).collect()
            }),
        }
    }

    /// Evaluate every row and fail if any produced a non-finite value,
    /// naming the offending rows. Successful rows are still computed.
    pub fn evaluate_checked(
        &self,
        model: &dyn ProbabilisticModel,
        thetas: &[Vec<f64>],
    ) -> Result<Vec<f64>> {
        let values = self.evaluate(model, thetas);
        let rows: Vec<usize> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_finite())
            .map(|(i, _)| i)
            .collect();
        if rows.is_empty() {
            Ok(values)
        } else {
            Err(Error::FailedRows { rows })
        }
    }
}

/// One-shot batch evaluation with a transient evaluator.
pub fn batch_evaluate(
    model: &dyn ProbabilisticModel,
    thetas: &[Vec<f64>],
    limit: usize,
) -> Result<Vec<f64>> {
    BatchEvaluator::new(limit)?.evaluate_checked(model, thetas)
}

/// Wrapper counting every model call, used to audit reported
/// cumulative-call numbers.
#[derive(Debug)]
pub struct CallCounter<M> {
    inner: M,
    count: AtomicUsize,
}

impl<M> CallCounter<M> {
    pub fn new(inner: M) -> Self {
        CallCounter {
            inner,
            count: AtomicUsize::new(0),
        }
    }

    pub fn count(&self) -> usize {
        self.count.load(Ordering::SeqCst)
    }

    pub fn into_inner(self) -> M {
        self.inner
    }
}

impl<M: ProbabilisticModel> ProbabilisticModel for CallCounter<M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn log_joint(&self, theta: &[f64]) -> f64 {
        self.count.fetch_add(1, Ordering::SeqCst);
        self.inner.log_joint(theta)
    }
}
