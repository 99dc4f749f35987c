//! ELBO gradient estimation from stored forward-model evaluations.
//!
//! The estimators operate on [`EvaluationSets`]: batches of samples, their
//! stored log-joint values, and the variational-parameter snapshots at
//! which each batch was drawn. The snapshots define an importance-sampling
//! mixture proposal whose coefficients are the relative batch sizes, so
//! evaluations from earlier iterations can be reused without bias. All
//! density ratios are formed in log space.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::variational::VariationalParams;
use rand::Rng;

/// One batch of forward-model evaluations: samples, matching log-joint
/// values, and the variational parameters the samples were drawn from.
#[derive(Debug, Clone)]
pub struct EvaluationBatch {
    pub thetas: Vec<Vec<f64>>,
    pub log_joints: Vec<f64>,
    pub snapshot: VariationalParams,
    /// Optimizer iteration at which the batch was drawn; used for reuse
    /// traces and eviction bookkeeping.
    pub iteration: usize,
}

impl EvaluationBatch {
    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }
}

/// The moving window of evaluation batches: samples, log-joints and
/// snapshots stay positionally aligned at all times.
#[derive(Debug, Clone, Default)]
pub struct EvaluationSets {
    batches: VecDeque<EvaluationBatch>,
}

impl EvaluationSets {
    pub fn new() -> Self {
        EvaluationSets {
            batches: VecDeque::new(),
        }
    }

    pub fn push_batch(&mut self, batch: EvaluationBatch) -> Result<()> {
        if batch.thetas.len() != batch.log_joints.len() {
            return Err(Error::input(format!(
                "batch has {} samples but {} log-joint values",
                batch.thetas.len(),
                batch.log_joints.len()
            )));
        }
        if batch.is_empty() {
            return Err(Error::input("empty evaluation batch"));
        }
        let d = batch.snapshot.dim();
        if batch.thetas.iter().any(|t| t.len() != d) {
            return Err(Error::input("sample dimension does not match snapshot"));
        }
        if let Some(first) = self.batches.front() {
            if first.snapshot.family() != batch.snapshot.family() {
                return Err(Error::input("batch snapshot family differs from stored sets"));
            }
        }
        self.batches.push_back(batch);
        Ok(())
    }

    pub fn evict_oldest(&mut self) -> Option<EvaluationBatch> {
        self.batches.pop_front()
    }

    pub fn clear(&mut self) {
        self.batches.clear();
    }

    pub fn num_batches(&self) -> usize {
        self.batches.len()
    }

    /// Total number of stored samples `M`.
    pub fn total_samples(&self) -> usize {
        self.batches.iter().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn batches(&self) -> impl Iterator<Item = &EvaluationBatch> {
        self.batches.iter()
    }

    /// Iterate all stored samples in batch order, then sample order.
    pub fn samples(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.batches
            .iter()
            .flat_map(|b| b.thetas.iter().map(|t| t.as_slice()).zip(b.log_joints.iter().copied()))
    }
}

/// Importance weights of every stored sample against the current
/// variational distribution, with the mixture-proposal log densities
/// cached per sample.
#[derive(Debug, Clone)]
pub struct IsWeights {
    pub weights: Vec<f64>,
    pub log_proposal: Vec<f64>,
}

impl IsWeights {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// An ELBO gradient estimate with its diagnostics.
#[derive(Debug, Clone)]
pub struct GradientEstimate {
    pub gradient: Vec<f64>,
    /// Importance-sampling ELBO estimate over the same samples, for logs.
    pub elbo: f64,
    pub m_used: usize,
    pub ess: f64,
    /// Euclidean norm of the importance-sampled score expectation error.
    pub e_is_norm: f64,
    /// Norm of the fresh-sample reference error when the caller computed
    /// one; the estimator itself draws no new samples.
    pub e_ref_norm: Option<f64>,
    pub baseline: f64,
    pub baseline_degenerate: bool,
}

/// Matrix defining the criterion norm `sqrt(v' A^-1 v)`.
#[derive(Debug, Clone)]
pub enum NormMatrix {
    Identity,
    Diagonal(Vec<f64>),
}

/// Mixture coefficients `beta_j = |batch_j| / M`.
pub fn mixture_coefficients(sets: &EvaluationSets) -> Result<Vec<f64>> {
    if sets.is_empty() {
        return Err(Error::state("mixture coefficients of empty evaluation sets"));
    }
    let m = sets.total_samples() as f64;
    Ok(sets.batches().map(|b| b.len() as f64 / m).collect())
}

/// Importance weights `w_s = q(theta_s | lambda_i) / sum_j beta_j
/// q(theta_s | lambda_j)`, evaluated in log space.
pub fn is_weights(q_current: &VariationalParams, sets: &EvaluationSets) -> Result<IsWeights> {
    if sets.is_empty() {
        return Err(Error::state("importance weights of empty evaluation sets"));
    }
    let family = q_current.family();
    for b in sets.batches() {
        if b.snapshot.family() != family {
            return Err(Error::input(
                "stored snapshot family does not match current distribution",
            ));
        }
    }
    let betas = mixture_coefficients(sets)?;
    let log_betas: Vec<f64> = betas.iter().map(|b| b.ln()).collect();
    let snapshots: Vec<&VariationalParams> = sets.batches().map(|b| &b.snapshot).collect();

    let m = sets.total_samples();
    let mut weights = Vec::with_capacity(m);
    let mut log_proposal = Vec::with_capacity(m);
    for (s, (theta, _)) in sets.samples().enumerate() {
        let log_q = q_current.log_density(theta)?;
        // log-sum-exp over mixture components
        let mut terms = Vec::with_capacity(snapshots.len());
        for (j, snap) in snapshots.iter().enumerate() {
            terms.push(log_betas[j] + snap.log_density(theta)?);
        }
        let peak = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_mix = peak + terms.iter().map(|t| (t - peak).exp()).sum::<f64>().ln();
        let w = (log_q - log_mix).exp();
        if !w.is_finite() {
            return Err(Error::numerical(format!(
                "non-finite importance weight at sample {s}"
            )));
        }
        weights.push(w);
        log_proposal.push(log_mix);
    }
    Ok(IsWeights {
        weights,
        log_proposal,
    })
}

/// Effective sample size `(sum w)^2 / sum w^2`.
pub fn ess(weights: &IsWeights) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::state("ESS of empty weights"));
    }
    let sum: f64 = weights.weights.iter().sum();
    let sumsq: f64 = weights.weights.iter().map(|w| w * w).sum();
    if sumsq == 0.0 {
        return Err(Error::numerical("degenerate weights: all zero"));
    }
    Ok(sum * sum / sumsq)
}

/// Raw score-function gradient contribution of a single sample:
/// `score(theta) * (log_joint - log q(theta))`.
pub fn score_gradient_raw(
    q: &VariationalParams,
    theta: &[f64],
    log_joint: f64,
) -> Result<Vec<f64>> {
    if !log_joint.is_finite() {
        return Err(Error::input("non-finite log-joint value"));
    }
    let inner = log_joint - q.log_density(theta)?;
    let mut s = q.score(theta)?;
    for v in &mut s {
        *v *= inner;
    }
    Ok(s)
}

/// Control-variate coefficient `a = sum_c Cov(score_c, g_c) / sum_c
/// Var(score_c)`, with both moments estimated by self-normalized
/// importance-weighted Monte Carlo over the stored sets.
///
/// Returns the coefficient and a flag set when the variance denominator
/// degenerates (the coefficient is then zero).
pub fn baseline_coefficient(
    q: &VariationalParams,
    sets: &EvaluationSets,
    weights: &IsWeights,
) -> Result<(f64, bool)> {
    let m = sets.total_samples();
    if m < 2 {
        return Err(Error::state("baseline coefficient needs at least two samples"));
    }
    if weights.len() != m {
        return Err(Error::input("weights do not match evaluation sets"));
    }
    let p = q.param_len();
    let w_sum: f64 = weights.weights.iter().sum();
    if w_sum == 0.0 {
        return Ok((0.0, true));
    }

    let mut scores = Vec::with_capacity(m);
    let mut raws = Vec::with_capacity(m);
    for (theta, log_joint) in sets.samples() {
        let s = q.score(theta)?;
        let g = score_gradient_raw(q, theta, log_joint)?;
        scores.push(s);
        raws.push(g);
    }

    let mut mean_score = vec![0.0; p];
    let mut mean_raw = vec![0.0; p];
    for s in 0..m {
        let w = weights.weights[s] / w_sum;
        for c in 0..p {
            mean_score[c] += w * scores[s][c];
            mean_raw[c] += w * raws[s][c];
        }
    }
    let mut cov = 0.0;
    let mut var = 0.0;
    for s in 0..m {
        let w = weights.weights[s] / w_sum;
        for c in 0..p {
            let ds = scores[s][c] - mean_score[c];
            cov += w * ds * (raws[s][c] - mean_raw[c]);
            var += w * ds * ds;
        }
    }
    if var <= f64::EPSILON {
        return Ok((0.0, true));
    }
    Ok((cov / var, false))
}

/// Importance-sampled ELBO gradient estimate
/// `(1/M) sum_s w_s (g_sc(theta_s) - a * score(theta_s))` together with
/// the matching ELBO estimate and diagnostics.
pub fn elbo_gradient(q: &VariationalParams, sets: &EvaluationSets) -> Result<GradientEstimate> {
    let weights = is_weights(q, sets)?;
    elbo_gradient_with_weights(q, sets, &weights)
}

/// As [`elbo_gradient`] with precomputed weights.
pub fn elbo_gradient_with_weights(
    q: &VariationalParams,
    sets: &EvaluationSets,
    weights: &IsWeights,
) -> Result<GradientEstimate> {
    let m = sets.total_samples();
    if weights.len() != m {
        return Err(Error::input("weights do not match evaluation sets"));
    }
    let (a, degenerate) = baseline_coefficient(q, sets, weights)?;
    let p = q.param_len();
    let mut gradient = vec![0.0; p];
    let mut e_is = vec![0.0; p];
    let mut elbo = 0.0;
    for (s, (theta, log_joint)) in sets.samples().enumerate() {
        let w = weights.weights[s];
        let score = q.score(theta)?;
        let inner = log_joint - q.log_density(theta)?;
        elbo += w * inner;
        for c in 0..p {
            gradient[c] += w * (score[c] * inner - a * score[c]);
            e_is[c] += w * score[c];
        }
    }
    let m_f = m as f64;
    for c in 0..p {
        gradient[c] /= m_f;
        e_is[c] /= m_f;
    }
    elbo /= m_f;
    if !gradient.iter().all(|g| g.is_finite()) {
        return Err(Error::numerical("non-finite gradient estimate"));
    }
    Ok(GradientEstimate {
        gradient,
        elbo,
        m_used: m,
        ess: ess(weights)?,
        e_is_norm: e_is.iter().map(|v| v * v).sum::<f64>().sqrt(),
        e_ref_norm: None,
        baseline: a,
        baseline_degenerate: degenerate,
    })
}

/// Importance-sampled score expectation `(1/M) sum_s w_s score(theta_s)`.
/// Its exact value is zero, so the estimate is a direct error readout.
pub fn score_error_is(q: &VariationalParams, sets: &EvaluationSets) -> Result<Vec<f64>> {
    let weights = is_weights(q, sets)?;
    score_error_is_with_weights(q, sets, &weights)
}

/// As [`score_error_is`] with externally supplied weights.
pub fn score_error_is_with_weights(
    q: &VariationalParams,
    sets: &EvaluationSets,
    weights: &IsWeights,
) -> Result<Vec<f64>> {
    let m = sets.total_samples();
    if weights.len() != m {
        return Err(Error::input("weights do not match evaluation sets"));
    }
    let p = q.param_len();
    let mut acc = vec![0.0; p];
    for (s, (theta, _)) in sets.samples().enumerate() {
        let score = q.score(theta)?;
        for c in 0..p {
            acc[c] += weights.weights[s] * score[c];
        }
    }
    for v in &mut acc {
        *v /= m as f64;
    }
    Ok(acc)
}

/// Reference score expectation over `n` fresh draws from `q`. Consumes no
/// forward-model evaluations.
pub fn score_error_ref<R: Rng + ?Sized>(
    q: &VariationalParams,
    n: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::input("reference estimate needs at least one sample"));
    }
    let p = q.param_len();
    let mut acc = vec![0.0; p];
    for _ in 0..n {
        let theta = q.sample_one(rng);
        let score = q.score(&theta)?;
        for c in 0..p {
            acc[c] += score[c];
        }
    }
    for v in &mut acc {
        *v /= n as f64;
    }
    Ok(acc)
}

/// Criterion norm `sqrt(v' A^-1 v)` for a diagonal positive `A` or the
/// identity.
pub fn a_norm(v: &[f64], a: &NormMatrix) -> Result<f64> {
    match a {
        NormMatrix::Identity => Ok(v.iter().map(|x| x * x).sum::<f64>().sqrt()),
        NormMatrix::Diagonal(diag) => {
            if diag.len() != v.len() {
                return Err(Error::input(format!(
                    "norm matrix size {} != vector length {}",
                    diag.len(),
                    v.len()
                )));
            }
            let mut acc = 0.0;
            for (x, d) in v.iter().zip(diag) {
                if *d <= 0.0 {
                    return Err(Error::numerical("non-positive diagonal entry in norm matrix"));
                }
                acc += x * x / d;
            }
            Ok(acc.sqrt())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::variational::MeanFieldGaussian;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mean_field(mean: &[f64], log_std: &[f64]) -> VariationalParams {
        VariationalParams::MeanField(
            MeanFieldGaussian::new(mean.to_vec(), log_std.to_vec()).unwrap(),
        )
    }

    /// Gaussian target used as the probabilistic model in estimator tests.
    fn gaussian_log_joint(theta: &[f64], mean: &[f64], var: &[f64]) -> f64 {
        theta
            .iter()
            .zip(mean)
            .zip(var)
            .map(|((t, m), v)| {
                -0.5 * (2.0 * std::f64::consts::PI * v).ln() - 0.5 * (t - m).powi(2) / v
            })
            .sum()
    }

    /// Closed-form ascent gradient of the ELBO for a diagonal Gaussian
    /// target and mean-field q: `(m - mu)/c` on the mean block and
    /// `1 - sigma^2/c` on the log-std block.
    fn analytic_gradient(q: &VariationalParams, mean: &[f64], var: &[f64]) -> Vec<f64> {
        let VariationalParams::MeanField(mf) = q else {
            panic!("mean-field only")
        };
        let d = mf.dim();
        let mut g = vec![0.0; 2 * d];
        for i in 0..d {
            let sigma2 = (2.0 * mf.log_std[i]).exp();
            g[i] = (mean[i] - mf.mean[i]) / var[i];
            g[d + i] = 1.0 - sigma2 / var[i];
        }
        g
    }

    fn batch_from<R: Rng>(
        q: &VariationalParams,
        n: usize,
        target_mean: &[f64],
        target_var: &[f64],
        iteration: usize,
        rng: &mut R,
    ) -> EvaluationBatch {
        let thetas = q.sample(n, rng).unwrap();
        let log_joints = thetas
            .iter()
            .map(|t| gaussian_log_joint(t, target_mean, target_var))
            .collect();
        EvaluationBatch {
            thetas,
            log_joints,
            snapshot: q.clone(),
            iteration,
        }
    }

    #[test]
    fn mixture_coefficients_from_batch_sizes() {
        let q = mean_field(&[0.0], &[0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut sets = EvaluationSets::new();
        for n in [4, 8] {
            sets.push_batch(batch_from(&q, n, &[0.0], &[1.0], 0, &mut rng))
                .unwrap();
        }
        let betas = mixture_coefficients(&sets).unwrap();
        assert_abs_diff_eq!(betas[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(betas[1], 2.0 / 3.0, epsilon = 1e-15);

        let mut equal = EvaluationSets::new();
        for _ in 0..3 {
            equal
                .push_batch(batch_from(&q, 5, &[0.0], &[1.0], 0, &mut rng))
                .unwrap();
        }
        for b in mixture_coefficients(&equal).unwrap() {
            assert_abs_diff_eq!(b, 1.0 / 3.0, epsilon = 1e-15);
        }

        let mut single = EvaluationSets::new();
        single
            .push_batch(batch_from(&q, 7, &[0.0], &[1.0], 0, &mut rng))
            .unwrap();
        assert_eq!(mixture_coefficients(&single).unwrap(), vec![1.0]);

        assert!(matches!(
            mixture_coefficients(&EvaluationSets::new()),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn unit_weights_when_proposal_equals_current() {
        let q = mean_field(&[0.4, -0.1], &[0.2, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut sets = EvaluationSets::new();
        for i in 0..3 {
            sets.push_batch(batch_from(&q, 6, &[0.0, 0.0], &[1.0, 1.0], i, &mut rng))
                .unwrap();
        }
        let w = is_weights(&q, &sets).unwrap();
        for v in &w.weights {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn weights_match_direct_density_oracle() {
        let snap1 = mean_field(&[0.0], &[0.0]);
        let snap2 = mean_field(&[0.8], &[-0.3]);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut sets = EvaluationSets::new();
        sets.push_batch(batch_from(&snap1, 10, &[0.0], &[1.0], 1, &mut rng))
            .unwrap();
        sets.push_batch(batch_from(&snap2, 10, &[0.0], &[1.0], 2, &mut rng))
            .unwrap();

        let current = snap2.clone();
        let w = is_weights(&current, &sets).unwrap();
        for (s, (theta, _)) in sets.samples().enumerate() {
            let q2 = current.log_density(theta).unwrap().exp();
            let q1 = snap1.log_density(theta).unwrap().exp();
            let oracle = q2 / (0.5 * q1 + 0.5 * q2);
            assert!(
                (w.weights[s] - oracle).abs() / oracle.abs().max(1e-300) < 1e-10,
                "sample {s}: {} vs oracle {oracle}",
                w.weights[s]
            );
        }
    }

    #[test]
    fn weights_have_unit_mean_under_proposal() {
        // E_p[q/p] = 1 for the mixture proposal p; check the empirical
        // mean over proposal draws stays within 5 MC standard errors.
        let snap1 = mean_field(&[0.0, 0.0], &[0.0, 0.0]);
        let snap2 = mean_field(&[0.5, -0.5], &[-0.2, 0.1]);
        let current = mean_field(&[0.3, -0.2], &[0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut sets = EvaluationSets::new();
        sets.push_batch(batch_from(&snap1, 50_000, &[0.0, 0.0], &[1.0, 1.0], 1, &mut rng))
            .unwrap();
        sets.push_batch(batch_from(&snap2, 50_000, &[0.0, 0.0], &[1.0, 1.0], 2, &mut rng))
            .unwrap();
        let w = is_weights(&current, &sets).unwrap();
        let n = w.len() as f64;
        let mean = w.weights.iter().sum::<f64>() / n;
        let var = w.weights.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let se = (var / n).sqrt();
        assert!(
            (mean - 1.0).abs() <= 5.0 * se,
            "weight mean {mean}, se {se}"
        );
    }

    #[test]
    fn ess_values() {
        let w = |v: &[f64]| IsWeights {
            weights: v.to_vec(),
            log_proposal: vec![0.0; v.len()],
        };
        assert_abs_diff_eq!(ess(&w(&[2.0, 2.0, 2.0, 2.0])).unwrap(), 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ess(&w(&[1.0, 0.0, 0.0, 0.0])).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ess(&w(&[1.0, 1.0, 2.0])).unwrap(), 16.0 / 6.0, epsilon = 1e-12);
        assert!(matches!(
            ess(&w(&[0.0, 0.0])),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn raw_gradient_vanishes_on_perfect_match() {
        let q = mean_field(&[0.2, -0.4], &[0.1, 0.3]);
        let theta = [1.0, 0.5];
        let lj = q.log_density(&theta).unwrap();
        let g = score_gradient_raw(&q, &theta, lj).unwrap();
        for v in g {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn raw_gradient_shifts_linearly_with_log_joint() {
        let q = mean_field(&[0.2], &[0.0]);
        let theta = [0.9];
        let lj = -1.3;
        let c = 2.5;
        let g0 = score_gradient_raw(&q, &theta, lj).unwrap();
        let g1 = score_gradient_raw(&q, &theta, lj + c).unwrap();
        let score = q.score(&theta).unwrap();
        for i in 0..g0.len() {
            assert_abs_diff_eq!(g1[i] - g0[i], c * score[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn raw_gradient_mean_matches_analytic_elbo_gradient() {
        let q = mean_field(&[0.3], &[-0.2]);
        let target_mean = [0.0];
        let target_var = [0.1];
        let analytic = analytic_gradient(&q, &target_mean, &target_var);
        let n = 200_000;
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let p = q.param_len();
        let mut sum = vec![0.0; p];
        let mut sumsq = vec![0.0; p];
        for _ in 0..n {
            let theta = q.sample_one(&mut rng);
            let lj = gaussian_log_joint(&theta, &target_mean, &target_var);
            let g = score_gradient_raw(&q, &theta, lj).unwrap();
            for c in 0..p {
                sum[c] += g[c];
                sumsq[c] += g[c] * g[c];
            }
        }
        for c in 0..p {
            let mean = sum[c] / n as f64;
            let var = sumsq[c] / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt();
            assert!(
                (mean - analytic[c]).abs() <= 5.0 * se,
                "component {c}: {mean} vs {} (se {se})",
                analytic[c]
            );
        }
    }

    #[test]
    fn baseline_zero_for_zero_raw_gradient() {
        // Log-joint equals the current log density so the inner cost and
        // the raw gradient vanish identically.
        let q = mean_field(&[0.0, 0.0], &[0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let thetas = q.sample(64, &mut rng).unwrap();
        let log_joints: Vec<f64> = thetas.iter().map(|t| q.log_density(t).unwrap()).collect();
        let mut sets = EvaluationSets::new();
        sets.push_batch(EvaluationBatch {
            thetas,
            log_joints,
            snapshot: q.clone(),
            iteration: 0,
        })
        .unwrap();
        let w = is_weights(&q, &sets).unwrap();
        let (a, _) = baseline_coefficient(&q, &sets, &w).unwrap();
        assert_abs_diff_eq!(a, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn baseline_recovers_exact_linear_coefficient() {
        // Make g_sc = 3 * score by forcing the inner cost to the constant
        // 3: log_joint = log q + 3.
        let q = mean_field(&[0.1, -0.2], &[0.0, 0.2]);
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let thetas = q.sample(128, &mut rng).unwrap();
        let log_joints: Vec<f64> = thetas
            .iter()
            .map(|t| q.log_density(t).unwrap() + 3.0)
            .collect();
        let mut sets = EvaluationSets::new();
        sets.push_batch(EvaluationBatch {
            thetas,
            log_joints,
            snapshot: q.clone(),
            iteration: 0,
        })
        .unwrap();
        let w = is_weights(&q, &sets).unwrap();
        let (a, degenerate) = baseline_coefficient(&q, &sets, &w).unwrap();
        assert!(!degenerate);
        assert_abs_diff_eq!(a, 3.0, epsilon = 1e-10);
    }

    #[test]
    fn baseline_matches_independent_loop_implementation() {
        let q = mean_field(&[0.2, -0.1], &[0.1, -0.3]);
        let snap = mean_field(&[0.0, 0.0], &[0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let mut sets = EvaluationSets::new();
        sets.push_batch(batch_from(&snap, 1000, &[0.0, 0.0], &[0.5, 0.8], 1, &mut rng))
            .unwrap();
        let w = is_weights(&q, &sets).unwrap();
        let (a, _) = baseline_coefficient(&q, &sets, &w).unwrap();

        // Straightforward re-implementation: accumulate raw sums first,
        // derive the self-normalized moments afterwards.
        let p = q.param_len();
        let mut w_sum = 0.0;
        let mut s_sum = vec![0.0; p];
        let mut g_sum = vec![0.0; p];
        let mut sg_sum = vec![0.0; p];
        let mut ss_sum = vec![0.0; p];
        for (s, (theta, lj)) in sets.samples().enumerate() {
            let wt = w.weights[s];
            let sc = q.score(theta).unwrap();
            let g = score_gradient_raw(&q, theta, lj).unwrap();
            w_sum += wt;
            for c in 0..p {
                s_sum[c] += wt * sc[c];
                g_sum[c] += wt * g[c];
                sg_sum[c] += wt * sc[c] * g[c];
                ss_sum[c] += wt * sc[c] * sc[c];
            }
        }
        let mut cov = 0.0;
        let mut var = 0.0;
        for c in 0..p {
            let ms = s_sum[c] / w_sum;
            let mg = g_sum[c] / w_sum;
            cov += sg_sum[c] / w_sum - ms * mg;
            var += ss_sum[c] / w_sum - ms * ms;
        }
        assert_abs_diff_eq!(a, cov / var, epsilon = 1e-12);
    }

    #[test]
    fn estimator_reduces_to_plain_bbvi_on_unit_weights() {
        let q = mean_field(&[0.3, -0.3], &[0.1, 0.1]);
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let mut sets = EvaluationSets::new();
        sets.push_batch(batch_from(&q, 64, &[0.0, 0.0], &[0.1, 0.1], 1, &mut rng))
            .unwrap();

        let est = elbo_gradient(&q, &sets).unwrap();

        // Plain baseline BBVI on the same samples: unit weights throughout.
        let unit = IsWeights {
            weights: vec![1.0; 64],
            log_proposal: vec![0.0; 64],
        };
        let (a, _) = baseline_coefficient(&q, &sets, &unit).unwrap();
        let p = q.param_len();
        let mut plain = vec![0.0; p];
        for (theta, lj) in sets.samples() {
            let sc = q.score(theta).unwrap();
            let inner = lj - q.log_density(theta).unwrap();
            for c in 0..p {
                plain[c] += sc[c] * inner - a * sc[c];
            }
        }
        for v in &mut plain {
            *v /= 64.0;
        }
        for c in 0..p {
            assert_abs_diff_eq!(est.gradient[c], plain[c], epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_baseline_reduces_to_pure_is_estimator() {
        let q = mean_field(&[0.2], &[0.0]);
        let snap = mean_field(&[0.0], &[0.1]);
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let mut sets = EvaluationSets::new();
        sets.push_batch(batch_from(&snap, 32, &[0.0], &[0.2], 1, &mut rng))
            .unwrap();
        let w = is_weights(&q, &sets).unwrap();
        let est = elbo_gradient_with_weights(&q, &sets, &w).unwrap();

        let p = q.param_len();
        let mut pure = vec![0.0; p];
        for (s, (theta, lj)) in sets.samples().enumerate() {
            let g = score_gradient_raw(&q, theta, lj).unwrap();
            let sc = q.score(theta).unwrap();
            for c in 0..p {
                pure[c] += w.weights[s] * (g[c] - est.baseline * sc[c]);
            }
        }
        for v in &mut pure {
            *v /= sets.total_samples() as f64;
        }
        for c in 0..p {
            assert_abs_diff_eq!(est.gradient[c], pure[c], epsilon = 1e-12);
        }
    }

    #[test]
    fn is_gradient_is_unbiased_over_replications() {
        // Stale two-snapshot proposal, d=2, M=64. The replication mean of
        // the estimator must match the closed-form gradient within five
        // standard errors of the mean.
        let current = mean_field(&[0.15, -0.1], &[-0.8, -1.0]);
        let snap1 = mean_field(&[0.3, 0.0], &[-0.7, -0.9]);
        let snap2 = mean_field(&[0.0, -0.2], &[-0.9, -1.1]);
        let target_mean = [0.0, 0.0];
        let target_var = [0.1, 0.1];
        let analytic = analytic_gradient(&current, &target_mean, &target_var);

        let reps = 500;
        let p = current.param_len();
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let mut sum = vec![0.0; p];
        let mut sumsq = vec![0.0; p];
        for _ in 0..reps {
            let mut sets = EvaluationSets::new();
            sets.push_batch(batch_from(&snap1, 32, &target_mean, &target_var, 1, &mut rng))
                .unwrap();
            sets.push_batch(batch_from(&snap2, 32, &target_mean, &target_var, 2, &mut rng))
                .unwrap();
            let est = elbo_gradient(&current, &sets).unwrap();
            for c in 0..p {
                sum[c] += est.gradient[c];
                sumsq[c] += est.gradient[c] * est.gradient[c];
            }
        }
        for c in 0..p {
            let mean = sum[c] / reps as f64;
            let var = sumsq[c] / reps as f64 - mean * mean;
            let se = (var / reps as f64).sqrt();
            assert!(
                (mean - analytic[c]).abs() <= 5.0 * se,
                "component {c}: replication mean {mean} vs analytic {} (se {se})",
                analytic[c]
            );
        }
    }

    #[test]
    fn score_error_is_scales_with_sample_count() {
        let q = mean_field(&[0.0], &[0.0]);
        let target_mean = [0.0];
        let target_var = [1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let mut mean_sq = [0.0, 0.0];
        for (idx, m) in [64usize, 128].into_iter().enumerate() {
            let reps = 200;
            let mut acc = 0.0;
            for _ in 0..reps {
                let mut sets = EvaluationSets::new();
                sets.push_batch(batch_from(&q, m, &target_mean, &target_var, 1, &mut rng))
                    .unwrap();
                let e = score_error_is(&q, &sets).unwrap();
                acc += e.iter().map(|v| v * v).sum::<f64>();
            }
            mean_sq[idx] = acc / reps as f64;
        }
        let ratio = mean_sq[0] / mean_sq[1];
        assert!(
            (ratio - 2.0).abs() < 0.4,
            "doubling M should halve the mean squared norm, ratio {ratio}"
        );
    }

    #[test]
    fn score_error_is_single_sample_at_mean() {
        let q = mean_field(&[0.4, -0.4], &[0.0, 0.0]);
        let mut sets = EvaluationSets::new();
        sets.push_batch(EvaluationBatch {
            thetas: vec![vec![0.4, -0.4]],
            log_joints: vec![0.0],
            snapshot: q.clone(),
            iteration: 1,
        })
        .unwrap();
        let e = score_error_is(&q, &sets).unwrap();
        assert_abs_diff_eq!(e[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e[1], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e[2], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e[3], -1.0, epsilon = 1e-14);
    }

    #[test]
    fn score_error_is_zero_weights_gives_zero_vector() {
        let q = mean_field(&[0.0], &[0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let mut sets = EvaluationSets::new();
        sets.push_batch(batch_from(&q, 8, &[0.0], &[1.0], 1, &mut rng))
            .unwrap();
        let zero = IsWeights {
            weights: vec![0.0; 8],
            log_proposal: vec![0.0; 8],
        };
        let e = score_error_is_with_weights(&q, &sets, &zero).unwrap();
        assert!(e.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn score_error_ref_zero_expectation_and_determinism() {
        let q = mean_field(&[0.5, -0.5], &[0.1, -0.1]);
        let reps = 400;
        let n = 64;
        let p = q.param_len();
        let mut rng = ChaCha8Rng::seed_from_u64(79);
        let mut sum = vec![0.0; p];
        let mut sumsq = vec![0.0; p];
        for _ in 0..reps {
            let e = score_error_ref(&q, n, &mut rng).unwrap();
            for c in 0..p {
                sum[c] += e[c];
                sumsq[c] += e[c] * e[c];
            }
        }
        for c in 0..p {
            let mean = sum[c] / reps as f64;
            let var = sumsq[c] / reps as f64 - mean * mean;
            let se = (var / reps as f64).sqrt();
            assert!(mean.abs() <= 5.0 * se, "component {c}: {mean} (se {se})");
        }

        let mut a = ChaCha8Rng::seed_from_u64(123);
        let mut b = ChaCha8Rng::seed_from_u64(123);
        assert_eq!(
            score_error_ref(&q, 16, &mut a).unwrap(),
            score_error_ref(&q, 16, &mut b).unwrap()
        );
    }

    #[test]
    fn score_error_ref_degenerate_draw_at_mean() {
        // Standard deviation small enough that mu + sigma z rounds to mu
        // exactly, forcing the single draw onto the mean.
        let q = mean_field(&[0.9], &[1e-18_f64.ln()]);
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let e = score_error_ref(&q, 1, &mut rng).unwrap();
        assert_abs_diff_eq!(e[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e[1], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn a_norm_cases() {
        assert_abs_diff_eq!(
            a_norm(&[3.0, 4.0], &NormMatrix::Identity).unwrap(),
            5.0,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            a_norm(&[2.0], &NormMatrix::Diagonal(vec![4.0])).unwrap(),
            1.0,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            a_norm(&[0.0, 0.0], &NormMatrix::Identity).unwrap(),
            0.0,
            epsilon = 1e-14
        );
        assert!(matches!(
            a_norm(&[1.0], &NormMatrix::Diagonal(vec![0.0])),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn weights_stay_finite_for_extreme_log_densities() {
        // |ln q| up to 1e4: a snapshot very far from the samples makes the
        // stored density astronomically small; the log-space path must not
        // overflow.
        let far = mean_field(&[140.0], &[0.0]);
        let near = mean_field(&[0.0], &[0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(89);
        let mut sets = EvaluationSets::new();
        sets.push_batch(batch_from(&near, 16, &[0.0], &[1.0], 1, &mut rng))
            .unwrap();
        sets.push_batch(batch_from(&far, 16, &[0.0], &[1.0], 2, &mut rng))
            .unwrap();
        // ln q of near samples under far snapshot is about -1e4.
        let w = is_weights(&near, &sets).unwrap();
        assert!(w.weights.iter().all(|v| v.is_finite() && *v >= 0.0));
        let e = ess(&w).unwrap();
        assert!(e >= 1.0 && e <= 32.0);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(128))]

            #[test]
            fn ess_respects_bounds(
                raw in proptest::collection::vec(0.0..10.0f64, 1..40),
            ) {
                prop_assume!(raw.iter().any(|w| *w > 0.0));
                let m = raw.len() as f64;
                let w = IsWeights { weights: raw.clone(), log_proposal: vec![0.0; raw.len()] };
                let e = ess(&w).unwrap();
                prop_assert!(e >= 1.0 - 1e-12);
                prop_assert!(e <= m + 1e-9);
            }
        }
    }
}
