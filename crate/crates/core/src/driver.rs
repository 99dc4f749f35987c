//! The outer optimization loop and the adaptive sampling loop.
//!
//! Each iteration first runs the sampling loop ([`update_sets`]): up to
//! `min(window, i)` rounds in which the stored evaluation sets are judged
//! by three criteria (effective sample size, the importance-sampled score
//! expectation error against a fresh-sample reference, and a periodic
//! forcing flag). A round that fails draws a fresh batch of `N` samples
//! from the current distribution, evaluates the forward model on it and
//! appends it to the sets, evicting the oldest batch when the window
//! overflows; a round that passes exits the loop. The outer loop then
//! estimates the ELBO gradient by importance sampling over the sets and
//! applies the optimizer update.

use crate::error::{Error, Result};
use crate::estimators::{
    a_norm, elbo_gradient_with_weights, ess, is_weights, mixture_coefficients,
    score_error_is_with_weights, score_error_ref, EvaluationBatch, EvaluationSets, NormMatrix,
};
use crate::forward_models::ProbabilisticModel;
use crate::harness::BatchEvaluator;
use crate::optimizer::{apply_update, damping, OptimizerConfig, OptimizerState};
use crate::rng::DriverRng;
use crate::variational::VariationalParams;
use serde::{Deserialize, Serialize};

/// Stopping rule for the outer loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ConvergenceRule {
    /// `|lambda - reference| / |reference| < tol`; needs a known optimum.
    RelativeParameterError { reference: Vec<f64>, tol: f64 },
    /// Run until an iteration or model-call budget is exhausted.
    BudgetOnly,
}

/// Check the convergence rule against the current parameters. The
/// budget-only rule never reports convergence; budgets are enforced by
/// the driver loop.
pub fn convergence_check(q: &VariationalParams, rule: &ConvergenceRule) -> Result<bool> {
    match rule {
        ConvergenceRule::BudgetOnly => Ok(false),
        ConvergenceRule::RelativeParameterError { reference, tol } => {
            let lambda = q.flatten();
            if lambda.len() != reference.len() {
                return Err(Error::config(format!(
                    "convergence reference length {} != parameter length {}",
                    reference.len(),
                    lambda.len()
                )));
            }
            let ref_norm = reference.iter().map(|v| v * v).sum::<f64>().sqrt();
            if ref_norm == 0.0 {
                return Err(Error::config("convergence reference has zero norm"));
            }
            let err = lambda
                .iter()
                .zip(reference)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            Ok(err / ref_norm < *tol)
        }
    }
}

/// Sampling-loop and budget configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbrisConfig {
    /// Samples per forward-model batch (`N`).
    pub batch_size: usize,
    /// Moving-window size in batches (`m`). Zero disables reuse entirely:
    /// every iteration discards the stored sets and samples one fresh
    /// batch when a criterion fires, which recovers plain BBVI when the
    /// periodic interval is 1.
    pub window: usize,
    /// Force a batch every `periodic_interval` iterations.
    pub periodic_interval: usize,
    /// Scale on the reference norm in the score criterion.
    pub score_scale: f64,
    /// Evaluate the ESS criterion (empty sets always trigger).
    pub use_ess_criterion: bool,
    pub max_iterations: usize,
    pub max_model_calls: usize,
    pub convergence: ConvergenceRule,
    /// Redraw rounds allowed for failed forward evaluations per batch.
    pub eval_retries: usize,
    /// Concurrent model evaluations within a batch.
    pub parallelism: usize,
    /// Store the post-update parameter vector in each record.
    pub record_lambda: bool,
    /// Store the (source iteration, mixture coefficient) pairs per record.
    pub record_sources: bool,
}

impl AbrisConfig {
    pub fn new(batch_size: usize, window: usize) -> Self {
        AbrisConfig {
            batch_size,
            window,
            periodic_interval: 50,
            score_scale: 1.0,
            use_ess_criterion: true,
            max_iterations: 150_000,
            max_model_calls: 1_000_000,
            convergence: ConvergenceRule::BudgetOnly,
            eval_retries: 10,
            parallelism: 1,
            record_lambda: false,
            record_sources: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.periodic_interval == 0 {
            return Err(Error::config("periodic interval must be at least 1"));
        }
        if !(self.score_scale > 0.0) {
            return Err(Error::config("score criterion scale must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("need at least one iteration"));
        }
        Ok(())
    }
}

/// Per-iteration log entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Sampling-loop rounds entered (criterion evaluations).
    pub rounds: usize,
    pub new_calls: usize,
    pub cumulative_calls: usize,
    pub ess: f64,
    pub e_is_norm: f64,
    pub e_ref_norm: f64,
    pub ess_triggered: bool,
    pub score_triggered: bool,
    pub periodic_triggered: bool,
    pub elbo: f64,
    /// Parameter vector after this iteration's update, when recorded.
    pub lambda: Option<Vec<f64>>,
    /// `(source batch iteration, beta)` of the mixture components used by
    /// this iteration's estimate, when recorded.
    pub sources: Option<Vec<(usize, f64)>>,
}

/// Outcome of a full run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Converged,
    MaxIterations,
    BudgetExhausted,
    Diverged,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub q_final: VariationalParams,
    pub records: Vec<IterationRecord>,
    pub status: RunStatus,
    pub total_calls: usize,
}

/// Result of one sampling-loop pass.
#[derive(Debug, Clone, Default)]
pub struct SetsUpdate {
    pub calls_made: usize,
    pub rounds: usize,
    pub ess: f64,
    pub e_is_norm: f64,
    pub e_ref_norm: f64,
    pub ess_triggered: bool,
    pub score_triggered: bool,
    pub periodic_triggered: bool,
    /// Set when a required batch no longer fits in the model-call budget.
    pub budget_exhausted: bool,
}

struct CriterionEval {
    ess: f64,
    e_is_norm: f64,
    e_ref_norm: f64,
    ess_fires: bool,
    score_fires: bool,
}

/// Criterion norm matrix: damped Fisher information at the current
/// parameters for the mean-field family, identity for mixtures.
pub fn criterion_norm(
    q: &VariationalParams,
    iteration: usize,
    damping_schedule: &crate::optimizer::DampingSchedule,
) -> NormMatrix {
    match q.fisher_information() {
        Ok(diag) => {
            let eta = damping(iteration, damping_schedule);
            NormMatrix::Diagonal(diag.into_iter().map(|f| f + eta).collect())
        }
        Err(_) => NormMatrix::Identity,
    }
}

fn evaluate_criteria(
    q: &VariationalParams,
    sets: &EvaluationSets,
    config: &AbrisConfig,
    norm: &NormMatrix,
    rng: &mut DriverRng,
) -> Result<CriterionEval> {
    if sets.is_empty() {
        // Empty sets always trigger: the ESS of nothing is zero.
        return Ok(CriterionEval {
            ess: 0.0,
            e_is_norm: 0.0,
            e_ref_norm: 0.0,
            ess_fires: true,
            score_fires: false,
        });
    }
    let weights = is_weights(q, sets)?;
    let ess_value = match ess(&weights) {
        Ok(v) => v,
        // All-zero weights: the stored sets carry no information at the
        // current parameters, equivalent to ESS zero.
        Err(Error::Numerical(_)) => 0.0,
        Err(e) => return Err(e),
    };
    let e_is = score_error_is_with_weights(q, sets, &weights)?;
    let e_ref = score_error_ref(q, config.batch_size, &mut rng.reference)?;
    let e_is_norm = a_norm(&e_is, norm)?;
    let e_ref_norm = a_norm(&e_ref, norm)?;
    Ok(CriterionEval {
        ess: ess_value,
        e_is_norm,
        e_ref_norm,
        ess_fires: config.use_ess_criterion && ess_value <= config.batch_size as f64,
        score_fires: e_is_norm > config.score_scale * e_ref_norm,
    })
}

/// Draw a batch from `q` and evaluate the model on it, redrawing rows
/// with non-finite log-joints for up to `eval_retries` rounds. Returns
/// the batch and the number of model calls spent (failures included).
fn draw_evaluated_batch(
    q: &VariationalParams,
    iteration: usize,
    config: &AbrisConfig,
    model: &dyn ProbabilisticModel,
    evaluator: &BatchEvaluator,
    rng: &mut DriverRng,
) -> Result<(EvaluationBatch, usize)> {
    let n = config.batch_size;
    let mut thetas = q.sample(n, &mut rng.sampling)?;
    let mut log_joints = evaluator.evaluate(model, &thetas);
    let mut calls = n;
    for _ in 0..config.eval_retries {
        let failed: Vec<usize> = log_joints
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_finite())
            .map(|(i, _)| i)
            .collect();
        if failed.is_empty() {
            break;
        }
        let redraws = q.sample(failed.len(), &mut rng.sampling)?;
        let values = evaluator.evaluate(model, &redraws);
        calls += failed.len();
        for (k, row) in failed.into_iter().enumerate() {
            thetas[row] = redraws[k].clone();
            log_joints[row] = values[k];
        }
    }
    let failed: Vec<usize> = log_joints
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_finite())
        .map(|(i, _)| i)
        .collect();
    if !failed.is_empty() {
        return Err(Error::FailedRows { rows: failed });
    }
    Ok((
        EvaluationBatch {
            thetas,
            log_joints,
            snapshot: q.clone(),
            iteration,
        },
        calls,
    ))
}

/// The sampling loop: decide whether the stored sets support the next
/// gradient estimate and acquire fresh batches until they do (or the
/// round budget `min(window, i)` is spent).
#[allow(clippy::too_many_arguments)]
pub fn update_sets(
    iteration: usize,
    q: &VariationalParams,
    sets: &mut EvaluationSets,
    config: &AbrisConfig,
    norm: &NormMatrix,
    model: &dyn ProbabilisticModel,
    evaluator: &BatchEvaluator,
    rng: &mut DriverRng,
    calls_so_far: usize,
) -> Result<SetsUpdate> {
    let mut upd = SetsUpdate::default();
    let mut periodic = iteration % config.periodic_interval == 0;

    // Window zero: no reuse. The stored batch is discarded and replaced
    // whenever any criterion fires; at most one round runs.
    let effective_window = if config.window == 0 {
        1
    } else {
        config.window.min(iteration)
    };
    let max_rounds = if config.window == 0 { 1 } else { effective_window };

    for round in 1..=max_rounds {
        upd.rounds = round;
        let eval = evaluate_criteria(q, sets, config, norm, rng)?;
        upd.ess = eval.ess;
        upd.e_is_norm = eval.e_is_norm;
        upd.e_ref_norm = eval.e_ref_norm;

        if eval.ess_fires || eval.score_fires || periodic {
            if calls_so_far + upd.calls_made + config.batch_size > config.max_model_calls {
                upd.budget_exhausted = true;
                return Ok(upd);
            }
            upd.ess_triggered |= eval.ess_fires;
            upd.score_triggered |= eval.score_fires;
            upd.periodic_triggered |= periodic;

            if config.window == 0 {
                sets.clear();
            }
            let (batch, calls) =
                draw_evaluated_batch(q, iteration, config, model, evaluator, rng)?;
            sets.push_batch(batch)?;
            upd.calls_made += calls;
            if sets.num_batches() > effective_window {
                sets.evict_oldest();
            }
            // The periodic flag forces at most one batch per iteration.
            periodic = false;
        } else {
            break;
        }
    }
    Ok(upd)
}

/// Run the full inference loop until convergence or a budget stops it.
pub fn run(
    model: &dyn ProbabilisticModel,
    q_init: VariationalParams,
    config: &AbrisConfig,
    opt: &OptimizerConfig,
    rng: &mut DriverRng,
) -> Result<RunResult> {
    config.validate()?;
    if model.dim() != q_init.dim() {
        return Err(Error::input(format!(
            "model dimension {} != variational dimension {}",
            model.dim(),
            q_init.dim()
        )));
    }
    let evaluator = BatchEvaluator::new(config.parallelism)?;
    let mut q = q_init;
    let mut sets = EvaluationSets::new();
    let mut state = OptimizerState::new(q.param_len(), opt.base_lr, opt.schedule, opt.adam);
    let mut records = Vec::new();
    let mut cumulative = 0usize;
    let mut status = RunStatus::MaxIterations;

    for iteration in 1..=config.max_iterations {
        let norm = criterion_norm(&q, iteration, &opt.damping);
        let upd = update_sets(
            iteration, &q, &mut sets, config, &norm, model, &evaluator, rng, cumulative,
        )?;
        cumulative += upd.calls_made;

        if sets.is_empty() {
            // Could not afford the very first batch.
            records.push(make_record(iteration, &upd, cumulative, f64::NAN, None, None));
            status = RunStatus::BudgetExhausted;
            break;
        }

        let weights = is_weights(&q, &sets)?;
        let estimate = elbo_gradient_with_weights(&q, &sets, &weights)?;

        let sources = if config.record_sources {
            let betas = mixture_coefficients(&sets)?;
            Some(
                sets.batches()
                    .zip(betas)
                    .map(|(b, beta)| (b.iteration, beta))
                    .collect(),
            )
        } else {
            None
        };

        q = match apply_update(&q, &estimate.gradient, iteration, opt, &mut state) {
            Ok(next) if params_usable(&next) => next,
            // Non-finite or degenerate parameters: abort with a
            // diagnostic record.
            _ => {
                records.push(make_record(
                    iteration,
                    &upd,
                    cumulative,
                    estimate.elbo,
                    None,
                    sources,
                ));
                status = RunStatus::Diverged;
                break;
            }
        };

        let lambda = config.record_lambda.then(|| q.flatten());
        records.push(make_record(
            iteration,
            &upd,
            cumulative,
            estimate.elbo,
            lambda,
            sources,
        ));

        if convergence_check(&q, &config.convergence)? {
            status = RunStatus::Converged;
            break;
        }
        if upd.budget_exhausted || cumulative >= config.max_model_calls {
            status = RunStatus::BudgetExhausted;
            break;
        }
    }

    Ok(RunResult {
        q_final: q,
        records,
        status,
        total_calls: cumulative,
    })
}

/// Updated parameters are usable when every entry is finite and every
/// component standard deviation neither overflows nor collapses to zero.
fn params_usable(q: &VariationalParams) -> bool {
    let finite = q.flatten().iter().all(|v| v.is_finite());
    let scales_ok = |mf: &crate::variational::MeanFieldGaussian| {
        mf.log_std.iter().all(|c| {
            let s = c.exp();
            s.is_finite() && s > 0.0
        })
    };
    finite
        && match q {
            VariationalParams::MeanField(mf) => scales_ok(mf),
            VariationalParams::Mixture(mix) => mix.components.iter().all(scales_ok),
        }
}

fn make_record(
    iteration: usize,
    upd: &SetsUpdate,
    cumulative: usize,
    elbo: f64,
    lambda: Option<Vec<f64>>,
    sources: Option<Vec<(usize, f64)>>,
) -> IterationRecord {
    IterationRecord {
        iteration,
        rounds: upd.rounds,
        new_calls: upd.calls_made,
        cumulative_calls: cumulative,
        ess: upd.ess,
        e_is_norm: upd.e_is_norm,
        e_ref_norm: upd.e_ref_norm,
        ess_triggered: upd.ess_triggered,
        score_triggered: upd.score_triggered,
        periodic_triggered: upd.periodic_triggered,
        elbo,
        lambda,
        sources,
    }
}
