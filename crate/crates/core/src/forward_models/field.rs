//! Random-field representation of the log coefficient.
//!
//! The elementwise-constant field `zeta` is parameterized as
//! `ln zeta(theta, x_e) = sum_j theta_j phi_j(x_e)` with basis functions
//! taken from the eigendecomposition of the squared-exponential kernel
//! Gram matrix over the element centers. By default the eigenvectors are
//! scaled by the square root of their eigenvalue, so a standard-normal
//! prior on `theta` induces the kernel's covariance on the discretized
//! field; a flag restores the unscaled eigenvector convention.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

#[derive(Debug, Clone)]
pub struct FieldExpansion {
    /// Orthonormal eigenvectors of the Gram matrix, one column per term.
    eigenvectors: DMatrix<f64>,
    /// Matching eigenvalues, sorted descending.
    pub eigenvalues: Vec<f64>,
    pub length_scale: f64,
    pub scale_by_sqrt_eigenvalue: bool,
}

/// Squared-exponential kernel `exp(-|x - y|^2 / (2 l^2))`.
pub fn se_kernel(x: &[f64; 3], y: &[f64; 3], length_scale: f64) -> f64 {
    let r2: f64 = (0..3).map(|d| (x[d] - y[d]).powi(2)).sum();
    (-r2 / (2.0 * length_scale * length_scale)).exp()
}

/// Gram matrix of the squared-exponential kernel over the given centers.
pub fn se_gram_matrix(centers: &[[f64; 3]], length_scale: f64) -> DMatrix<f64> {
    let n = centers.len();
    DMatrix::from_fn(n, n, |a, b| se_kernel(&centers[a], &centers[b], length_scale))
}

/// Build a truncated expansion from the top `n_terms` eigenpairs of the
/// kernel Gram matrix.
pub fn se_kernel_basis(
    centers: &[[f64; 3]],
    length_scale: f64,
    n_terms: usize,
    scale_by_sqrt_eigenvalue: bool,
) -> Result<FieldExpansion> {
    if n_terms == 0 || n_terms > centers.len() {
        return Err(Error::input(format!(
            "requested {n_terms} terms from {} centers",
            centers.len()
        )));
    }
    if length_scale <= 0.0 {
        return Err(Error::input("length scale must be positive"));
    }
    let gram = se_gram_matrix(centers, length_scale);
    let eig = gram
        .try_symmetric_eigen(f64::EPSILON, 0)
        .ok_or_else(|| Error::numerical("eigendecomposition of the Gram matrix failed"))?;

    let n = centers.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

    let mut eigenvectors = DMatrix::zeros(n, n_terms);
    let mut eigenvalues = Vec::with_capacity(n_terms);
    for (col, &idx) in order.iter().take(n_terms).enumerate() {
        let v = eig.eigenvectors.column(idx);
        // canonical sign: largest-magnitude entry positive
        let mut pivot = 0;
        for r in 0..n {
            if v[r].abs() > v[pivot].abs() {
                pivot = r;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            eigenvectors[(r, col)] = sign * v[r];
        }
        eigenvalues.push(eig.eigenvalues[idx]);
    }

    Ok(FieldExpansion {
        eigenvectors,
        eigenvalues,
        length_scale,
        scale_by_sqrt_eigenvalue,
    })
}

impl FieldExpansion {
    pub fn n_terms(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n_centers(&self) -> usize {
        self.eigenvectors.nrows()
    }

    /// Orthonormal eigenvector columns, before any scaling.
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// The basis actually applied to `theta`: eigenvectors, scaled by
    /// `sqrt(eigenvalue)` when the flag is set. Eigenvalues of the SE
    /// Gram matrix can round to tiny negatives; they are floored at zero
    /// for the scaling.
    pub fn basis_matrix(&self) -> DMatrix<f64> {
        let mut basis = self.eigenvectors.clone();
        if self.scale_by_sqrt_eigenvalue {
            for (col, &ev) in self.eigenvalues.iter().enumerate() {
                let s = ev.max(0.0).sqrt();
                for r in 0..basis.nrows() {
                    basis[(r, col)] *= s;
                }
            }
        }
        basis
    }

    /// Log-field values `basis * theta` at the centers.
    pub fn log_field(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != self.n_terms() {
            return Err(Error::input(format!(
                "theta length {} != expansion terms {}",
                theta.len(),
                self.n_terms()
            )));
        }
        let basis = self.basis_matrix();
        let mut out = vec![0.0; self.n_centers()];
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (c, t) in theta.iter().enumerate() {
                acc += basis[(r, c)] * t;
            }
            *o = acc;
        }
        Ok(out)
    }

    /// Field values `exp(basis * theta)`, strictly positive. Exponents
    /// beyond +-700 are clamped; the flag reports whether clamping fired.
    pub fn field_from_theta(&self, theta: &[f64]) -> Result<(Vec<f64>, bool)> {
        let mut log_field = self.log_field(theta)?;
        let mut clamped = false;
        for v in &mut log_field {
            if v.abs() > 700.0 {
                *v = v.clamp(-700.0, 700.0);
                clamped = true;
            }
            *v = v.exp();
        }
        Ok((log_field, clamped))
    }
}
