//! Stochastic parameter updates.
//!
//! The update pipeline runs in a fixed order: raw importance-sampled
//! gradient, weight-logit regularization (mixtures only), damped inverse
//! Fisher preconditioning (mean-field only), L2-norm clipping, Adam, and
//! finally the ascent step `lambda <- lambda + delta`. Every stage is a
//! plain function so it can be exercised with pass-through settings.

use crate::error::{Error, Result};
use crate::variational::{GaussianMixture, VariationalParams};
use serde::{Deserialize, Serialize};

/// Adam moment-decay and stabilization constants.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LrSchedule {
    Constant,
    /// `base_lr * factor^(floor(i / interval))`.
    StepDecay { factor: f64, interval: usize },
}

/// Learning rate at iteration `i`.
pub fn lr_schedule(i: usize, base_lr: f64, rule: LrSchedule) -> f64 {
    match rule {
        LrSchedule::Constant => base_lr,
        LrSchedule::StepDecay { factor, interval } => {
            base_lr * factor.powi((i / interval) as i32)
        }
    }
}

/// Exponential damping schedule for the Fisher information matrix.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DampingSchedule {
    /// Initial damping, held constant before `threshold_iteration`.
    pub eta_init: f64,
    /// Iteration at which the exponential decay starts.
    pub threshold_iteration: usize,
    /// Lower bound on the damping.
    pub eta_bound: f64,
}

impl Default for DampingSchedule {
    fn default() -> Self {
        DampingSchedule {
            eta_init: 1e-2,
            threshold_iteration: 50,
            eta_bound: 1e-6,
        }
    }
}

/// Damping value at iteration `i`: `eta_init` before the threshold, then
/// `max(eta_init * exp(-(i - i_b)/i_b), eta_bound)`.
pub fn damping(i: usize, sched: &DampingSchedule) -> f64 {
    let ib = sched.threshold_iteration;
    if i < ib {
        sched.eta_init
    } else {
        let decayed = sched.eta_init * (-((i - ib) as f64) / ib as f64).exp();
        decayed.max(sched.eta_bound)
    }
}

/// Damped natural-gradient preconditioning `(F + eta I)^-1 grad` for the
/// mean-field family; mixtures pass through unchanged.
pub fn precondition(
    grad: &[f64],
    q: &VariationalParams,
    i: usize,
    sched: &DampingSchedule,
) -> Result<Vec<f64>> {
    precondition_with_eta(grad, q, damping(i, sched))
}

/// Preconditioning with an explicit damping value.
pub fn precondition_with_eta(grad: &[f64], q: &VariationalParams, eta: f64) -> Result<Vec<f64>> {
    match q {
        VariationalParams::Mixture(_) => Ok(grad.to_vec()),
        VariationalParams::MeanField(_) => {
            let fisher = q.fisher_information()?;
            if grad.len() != fisher.len() {
                return Err(Error::input(format!(
                    "gradient length {} != parameter length {}",
                    grad.len(),
                    fisher.len()
                )));
            }
            fisher
                .iter()
                .zip(grad)
                .map(|(f, g)| {
                    let d = f + eta;
                    if d <= 0.0 || !d.is_finite() {
                        Err(Error::numerical("non-positive damped Fisher diagonal"))
                    } else {
                        Ok(g / d)
                    }
                })
                .collect()
        }
    }
}

/// Rescale `grad` to `threshold` when its L2 norm exceeds it.
pub fn clip(grad: &[f64], threshold: f64) -> Result<Vec<f64>> {
    if threshold <= 0.0 {
        return Err(Error::input("clip threshold must be positive"));
    }
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > threshold {
        let scale = threshold / norm;
        Ok(grad.iter().map(|g| g * scale).collect())
    } else {
        Ok(grad.to_vec())
    }
}

/// Add the ascent gradient of the weight-logit penalty `-alpha_reg *
/// |lambda_omega|^2` to the logit block; the other blocks are untouched.
pub fn regularized_gradient(
    grad: &[f64],
    q: &GaussianMixture,
    alpha_reg: f64,
) -> Result<Vec<f64>> {
    let k = q.num_components();
    let expected = k * (2 * q.dim() + 1);
    if grad.len() != expected {
        return Err(Error::input(format!(
            "gradient length {} != mixture parameter length {expected}",
            grad.len()
        )));
    }
    let mut out = grad.to_vec();
    for (j, logit) in q.weight_logits.iter().enumerate() {
        out[j] -= 2.0 * alpha_reg * logit;
    }
    Ok(out)
}

/// Adam accumulator state.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step: usize,
    pub base_lr: f64,
    pub schedule: LrSchedule,
    pub adam: AdamParams,
}

impl OptimizerState {
    pub fn new(param_len: usize, base_lr: f64, schedule: LrSchedule, adam: AdamParams) -> Self {
        OptimizerState {
            first_moment: vec![0.0; param_len],
            second_moment: vec![0.0; param_len],
            step: 0,
            base_lr,
            schedule,
            adam,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// One bias-corrected Adam step in the ascent convention; the caller
    /// applies `lambda <- lambda + delta`.
    pub fn adam_step(&mut self, grad: &[f64]) -> Result<Vec<f64>> {
        if grad.len() != self.first_moment.len() {
            return Err(Error::input(format!(
                "gradient length {} != state length {}",
                grad.len(),
                self.first_moment.len()
            )));
        }
        if !grad.iter().all(|g| g.is_finite()) {
            return Err(Error::numerical("non-finite gradient passed to Adam"));
        }
        self.step += 1;
        let t = self.step as i32;
        let AdamParams {
            beta1,
            beta2,
            epsilon,
        } = self.adam;
        let lr = lr_schedule(self.step, self.base_lr, self.schedule);
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        let mut delta = vec![0.0; grad.len()];
        for c in 0..grad.len() {
            self.first_moment[c] = beta1 * self.first_moment[c] + (1.0 - beta1) * grad[c];
            self.second_moment[c] =
                beta2 * self.second_moment[c] + (1.0 - beta2) * grad[c] * grad[c];
            let m_hat = self.first_moment[c] / bias1;
            let v_hat = self.second_moment[c] / bias2;
            delta[c] = lr * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(delta)
    }
}

/// Full update-pipeline configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub schedule: LrSchedule,
    pub adam: AdamParams,
    pub clip_threshold: f64,
    pub damping: DampingSchedule,
    /// Weight-logit L2 regularization strength for mixture runs.
    pub alpha_reg: Option<f64>,
}

impl OptimizerConfig {
    pub fn new(base_lr: f64) -> Self {
        OptimizerConfig {
            base_lr,
            schedule: LrSchedule::Constant,
            adam: AdamParams::default(),
            clip_threshold: 1e6,
            damping: DampingSchedule::default(),
            alpha_reg: None,
        }
    }
}

/// Apply one full update: regularize (mixtures), precondition
/// (mean-field), clip, Adam, then add to the flattened parameters.
pub fn apply_update(
    q: &VariationalParams,
    gradient: &[f64],
    iteration: usize,
    config: &OptimizerConfig,
    state: &mut OptimizerState,
) -> Result<VariationalParams> {
    let mut g = gradient.to_vec();
    if let VariationalParams::Mixture(mix) = q {
        if let Some(alpha) = config.alpha_reg {
            g = regularized_gradient(&g, mix, alpha)?;
        }
    }
    g = precondition(&g, q, iteration, &config.damping)?;
    g = clip(&g, config.clip_threshold)?;
    let delta = state.adam_step(&g)?;
    let mut lambda = q.flatten();
    for (l, d) in lambda.iter_mut().zip(&delta) {
        *l += d;
    }
    VariationalParams::from_flat(q.family(), &lambda)
}
