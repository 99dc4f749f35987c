//! Variational distribution families.
//!
//! Two families are supported: a mean-field Gaussian with log-standard-
//! deviation parameterization (covariance `diag(exp(2*lambda_c))`), and a
//! Gaussian mixture whose weights are parameterized through a softmax of
//! logits. Both expose density evaluation, sampling, the score function
//! (gradient of the log density with respect to the flattened parameter
//! vector) and, for the mean-field family, the closed-form Fisher
//! information matrix.
//!
//! Flattening order is fixed: `(lambda_omega | lambda_mu per component |
//! lambda_c per component)`. The mean-field family has no weight block,
//! so its flattened vector is `(lambda_mu | lambda_c)` of length `2d`.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

const LN_2PI: f64 = 1.8378770664093453;

/// Mean-field Gaussian: independent coordinates with mean `mean[i]` and
/// standard deviation `exp(log_std[i])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldGaussian {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl MeanFieldGaussian {
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        if mean.len() != log_std.len() {
            return Err(Error::input(format!(
                "mean length {} != log_std length {}",
                mean.len(),
                log_std.len()
            )));
        }
        let q = MeanFieldGaussian { mean, log_std };
        q.check_finite()?;
        Ok(q)
    }

    /// Standard normal in `dim` dimensions.
    pub fn standard(dim: usize) -> Self {
        MeanFieldGaussian {
            mean: vec![0.0; dim],
            log_std: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check_finite(&self) -> Result<()> {
        if self.mean.iter().chain(self.log_std.iter()).all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::input("non-finite variational parameter"))
        }
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::input(format!(
                "theta length {} != family dimension {}",
                theta.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        self.check_theta(theta)?;
        self.check_finite()?;
        let mut acc = 0.0;
        for i in 0..self.dim() {
            let s = self.log_std[i].exp();
            let z = (theta[i] - self.mean[i]) / s;
            acc += -0.5 * LN_2PI - self.log_std[i] - 0.5 * z * z;
        }
        Ok(acc)
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                let z: f64 = StandardNormal.sample(rng);
                self.mean[i] + self.log_std[i].exp() * z
            })
            .collect()
    }

    /// Score of the component density with respect to `(mean | log_std)`,
    /// written into `out[mu_offset..]` and `out[c_offset..]` scaled by
    /// `factor`. Shared by the mean-field and mixture score computations.
    fn accumulate_score(
        &self,
        theta: &[f64],
        factor: f64,
        out: &mut [f64],
        mu_offset: usize,
        c_offset: usize,
    ) {
        for i in 0..self.dim() {
            let s = self.log_std[i].exp();
            let z = (theta[i] - self.mean[i]) / s;
            out[mu_offset + i] += factor * z / s;
            out[c_offset + i] += factor * (z * z - 1.0);
        }
    }
}

/// Gaussian mixture with softmax-parameterized weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub weight_logits: Vec<f64>,
    pub components: Vec<MeanFieldGaussian>,
}

impl GaussianMixture {
    pub fn new(weight_logits: Vec<f64>, components: Vec<MeanFieldGaussian>) -> Result<Self> {
        if weight_logits.len() != components.len() {
            return Err(Error::input(format!(
                "{} weight logits for {} components",
                weight_logits.len(),
                components.len()
            )));
        }
        if components.is_empty() {
            return Err(Error::input("mixture needs at least one component"));
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(Error::input("mixture components have unequal dimensions"));
        }
        let q = GaussianMixture {
            weight_logits,
            components,
        };
        q.check_finite()?;
        Ok(q)
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    fn check_finite(&self) -> Result<()> {
        if !self.weight_logits.iter().all(|x| x.is_finite()) {
            return Err(Error::input("non-finite weight logit"));
        }
        for c in &self.components {
            c.check_finite()?;
        }
        Ok(())
    }

    /// Softmax weights. Positive and summing to one by construction.
    pub fn weights(&self) -> Vec<f64> {
        let m = self
            .weight_logits
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = self.weight_logits.iter().map(|l| (l - m).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }

    fn log_weights(&self) -> Vec<f64> {
        let m = self
            .weight_logits
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = m + self
            .weight_logits
            .iter()
            .map(|l| (l - m).exp())
            .sum::<f64>()
            .ln();
        self.weight_logits.iter().map(|l| l - lse).collect()
    }

    /// Per-component `log w_k + log N_k(theta)` and their log-sum-exp,
    /// the mixture log density.
    fn component_log_terms(&self, theta: &[f64]) -> Result<(Vec<f64>, f64)> {
        let log_w = self.log_weights();
        let mut terms = Vec::with_capacity(self.num_components());
        for (k, c) in self.components.iter().enumerate() {
            terms.push(log_w[k] + c.log_density(theta)?);
        }
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
        Ok((terms, lse))
    }
}

/// Family descriptor: enough to reconstruct a distribution from a
/// flattened parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FamilySpec {
    MeanField { dim: usize },
    Mixture { components: usize, dim: usize },
}

impl FamilySpec {
    /// Length of the flattened parameter vector.
    pub fn param_len(&self) -> usize {
        match *self {
            FamilySpec::MeanField { dim } => 2 * dim,
            FamilySpec::Mixture { components, dim } => components * (2 * dim + 1),
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            FamilySpec::MeanField { dim } => dim,
            FamilySpec::Mixture { dim, .. } => dim,
        }
    }
}

/// A variational distribution of either supported family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VariationalParams {
    MeanField(MeanFieldGaussian),
    Mixture(GaussianMixture),
}

impl VariationalParams {
    /// Dimension of the sample space.
    pub fn dim(&self) -> usize {
        match self {
            VariationalParams::MeanField(q) => q.dim(),
            VariationalParams::Mixture(q) => q.dim(),
        }
    }

    pub fn family(&self) -> FamilySpec {
        match self {
            VariationalParams::MeanField(q) => FamilySpec::MeanField { dim: q.dim() },
            VariationalParams::Mixture(q) => FamilySpec::Mixture {
                components: q.num_components(),
                dim: q.dim(),
            },
        }
    }

    /// Length of the flattened parameter vector.
    pub fn param_len(&self) -> usize {
        self.family().param_len()
    }

    /// Flatten to `(lambda_omega | lambda_mu per component | lambda_c per
    /// component)`; the mean-field family omits the weight block.
    pub fn flatten(&self) -> Vec<f64> {
        match self {
            VariationalParams::MeanField(q) => {
                let mut out = Vec::with_capacity(2 * q.dim());
                out.extend_from_slice(&q.mean);
                out.extend_from_slice(&q.log_std);
                out
            }
            VariationalParams::Mixture(q) => {
                let mut out = Vec::with_capacity(self.param_len());
                out.extend_from_slice(&q.weight_logits);
                for c in &q.components {
                    out.extend_from_slice(&c.mean);
                }
                for c in &q.components {
                    out.extend_from_slice(&c.log_std);
                }
                out
            }
        }
    }

    /// Rebuild a distribution from a flattened vector.
    pub fn from_flat(family: FamilySpec, lambda: &[f64]) -> Result<Self> {
        if lambda.len() != family.param_len() {
            return Err(Error::input(format!(
                "flattened vector length {} != expected {}",
                lambda.len(),
                family.param_len()
            )));
        }
        if !lambda.iter().all(|x| x.is_finite()) {
            return Err(Error::input("non-finite entry in flattened parameters"));
        }
        match family {
            FamilySpec::MeanField { dim } => Ok(VariationalParams::MeanField(MeanFieldGaussian {
                mean: lambda[..dim].to_vec(),
                log_std: lambda[dim..].to_vec(),
            })),
            FamilySpec::Mixture { components, dim } => {
                let logits = lambda[..components].to_vec();
                let mu_base = components;
                let c_base = components + components * dim;
                let comps = (0..components)
                    .map(|k| MeanFieldGaussian {
                        mean: lambda[mu_base + k * dim..mu_base + (k + 1) * dim].to_vec(),
                        log_std: lambda[c_base + k * dim..c_base + (k + 1) * dim].to_vec(),
                    })
                    .collect();
                Ok(VariationalParams::Mixture(GaussianMixture {
                    weight_logits: logits,
                    components: comps,
                }))
            }
        }
    }

    /// Log density `ln q(theta | lambda)`. Mixtures are evaluated through
    /// log-sum-exp over components.
    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        match self {
            VariationalParams::MeanField(q) => q.log_density(theta),
            VariationalParams::Mixture(q) => {
                q.check_finite()?;
                let (_, lse) = q.component_log_terms(theta)?;
                Ok(lse)
            }
        }
    }

    /// Draw one sample. Mixture sampling picks a component from the
    /// softmax weights, then draws from that component.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            VariationalParams::MeanField(q) => q.sample_one(rng),
            VariationalParams::Mixture(q) => {
                let w = q.weights();
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut idx = q.num_components() - 1;
                for (k, wk) in w.iter().enumerate() {
                    acc += wk;
                    if u < acc {
                        idx = k;
                        break;
                    }
                }
                q.components[idx].sample_one(rng)
            }
        }
    }

    /// Draw `n` i.i.d. samples as rows.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        if n == 0 {
            return Err(Error::input("sample count must be at least 1"));
        }
        Ok((0..n).map(|_| self.sample_one(rng)).collect())
    }

    /// Gradient of `ln q(theta | lambda)` with respect to the flattened
    /// parameter vector.
    ///
    /// For the mean-field Gaussian the blocks are `(theta - mu) / sigma^2`
    /// and `(theta - mu)^2 / sigma^2 - 1`. For the mixture, component
    /// blocks carry the responsibility-weighted component scores and the
    /// logit block is `r_k - omega_k`.
    pub fn score(&self, theta: &[f64]) -> Result<Vec<f64>> {
        match self {
            VariationalParams::MeanField(q) => {
                q.check_theta(theta)?;
                q.check_finite()?;
                let d = q.dim();
                let mut out = vec![0.0; 2 * d];
                q.accumulate_score(theta, 1.0, &mut out, 0, d);
                Ok(out)
            }
            VariationalParams::Mixture(q) => {
                q.check_finite()?;
                let (terms, lse) = q.component_log_terms(theta)?;
                let k = q.num_components();
                let d = q.dim();
                let w = q.weights();
                let mut out = vec![0.0; k * (2 * d + 1)];
                for (j, c) in q.components.iter().enumerate() {
                    let resp = (terms[j] - lse).exp();
                    out[j] = resp - w[j];
                    c.accumulate_score(theta, resp, &mut out, k + j * d, k + k * d + j * d);
                }
                Ok(out)
            }
        }
    }

    /// Diagonal of the Fisher information matrix, mean-field family only:
    /// `diag(exp(-2*lambda_c))` on the mean block and `2` on the log-std
    /// block. Mixture information is not available in closed form; callers
    /// fall back to the identity.
    pub fn fisher_information(&self) -> Result<Vec<f64>> {
        match self {
            VariationalParams::MeanField(q) => {
                let mut diag = Vec::with_capacity(2 * q.dim());
                diag.extend(q.log_std.iter().map(|c| (-2.0 * c).exp()));
                diag.extend(std::iter::repeat(2.0).take(q.dim()));
                Ok(diag)
            }
            VariationalParams::Mixture(_) => Err(Error::UnsupportedFamily(
                "Fisher information is only defined for the mean-field family".into(),
            )),
        }
    }
}
