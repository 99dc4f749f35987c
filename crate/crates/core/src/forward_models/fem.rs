//! Trilinear hexahedral finite elements for `div(-zeta grad u) = 10`.
//!
//! The coefficient is constant per element, so the geometric part of the
//! element stiffness is computed once (all elements are congruent bricks)
//! and scaled by `zeta_e` during assembly. The volumetric source is the
//! constant 10; homogeneous Dirichlet values are eliminated from the
//! system and a dense Cholesky factorization solves the reduced SPD
//! system.

use super::mesh::PoissonMesh;
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Reference-element coordinates of the 8 local nodes.
const LOCAL_SIGNS: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
];

/// Unit element stiffness (zeta = 1) for a brick with edge lengths `h`,
/// integrated with 2 x 2 x 2 Gauss quadrature.
pub fn reference_stiffness(h: [f64; 3]) -> [[f64; 8]; 8] {
    let g = 1.0 / 3.0_f64.sqrt();
    let det_j = h[0] * h[1] * h[2] / 8.0;
    let inv_j = [2.0 / h[0], 2.0 / h[1], 2.0 / h[2]];
    let mut k = [[0.0; 8]; 8];
    for gp3 in [-g, g] {
        for gp2 in [-g, g] {
            for gp1 in [-g, g] {
                let xi = [gp1, gp2, gp3];
                // physical-space shape gradients at the Gauss point
                let mut grads = [[0.0; 3]; 8];
                for (a, s) in LOCAL_SIGNS.iter().enumerate() {
                    for dir in 0..3 {
                        let mut v = 0.125 * s[dir];
                        for other in 0..3 {
                            if other != dir {
                                v *= 1.0 + s[other] * xi[other];
                            }
                        }
                        grads[a][dir] = v * inv_j[dir];
                    }
                }
                for a in 0..8 {
                    for b in 0..8 {
                        let dot: f64 = (0..3).map(|d| grads[a][d] * grads[b][d]).sum();
                        k[a][b] += dot * det_j;
                    }
                }
            }
        }
    }
    k
}

/// Assemble the full stiffness matrix for an elementwise-constant
/// coefficient field. Dirichlet conditions are not applied here.
pub fn assemble_stiffness(mesh: &PoissonMesh, zeta: &[f64]) -> Result<DMatrix<f64>> {
    if zeta.len() != mesh.num_elements() {
        return Err(Error::input(format!(
            "coefficient field has {} entries for {} elements",
            zeta.len(),
            mesh.num_elements()
        )));
    }
    let k_ref = reference_stiffness(mesh.h);
    let n = mesh.num_nodes();
    let mut k = DMatrix::zeros(n, n);
    for (e, conn) in mesh.elements.iter().enumerate() {
        let ze = zeta[e];
        for a in 0..8 {
            for b in 0..8 {
                k[(conn[a], conn[b])] += ze * k_ref[a][b];
            }
        }
    }
    Ok(k)
}

/// Consistent load vector for the constant source 10.
fn assemble_load(mesh: &PoissonMesh) -> DVector<f64> {
    let volume_share = 10.0 * mesh.h[0] * mesh.h[1] * mesh.h[2] / 8.0;
    let mut f = DVector::zeros(mesh.num_nodes());
    for conn in &mesh.elements {
        for &node in conn {
            f[node] += volume_share;
        }
    }
    f
}

/// Solve the generalized Poisson problem and return the nodal solution on
/// the output face `x1 = -0.05` in the mesh's fixed face order.
pub fn poisson_solve(mesh: &PoissonMesh, zeta: &[f64]) -> Result<Vec<f64>> {
    let full = poisson_solve_full(mesh, zeta)?;
    Ok(mesh.face_nodes.iter().map(|&id| full[id]).collect())
}

/// Full nodal solution (all nodes, Dirichlet entries zero).
pub fn poisson_solve_full(mesh: &PoissonMesh, zeta: &[f64]) -> Result<Vec<f64>> {
    if zeta.iter().any(|z| !z.is_finite() || *z <= 0.0) {
        return Err(Error::input("coefficient field must be strictly positive"));
    }
    let k = assemble_stiffness(mesh, zeta)?;
    let f = assemble_load(mesh);

    let free: Vec<usize> = (0..mesh.num_nodes())
        .filter(|&id| !mesh.dirichlet[id])
        .collect();
    let nf = free.len();
    let mut kf = DMatrix::zeros(nf, nf);
    let mut ff = DVector::zeros(nf);
    for (i, &gi) in free.iter().enumerate() {
        ff[i] = f[gi];
        for (j, &gj) in free.iter().enumerate() {
            kf[(i, j)] = k[(gi, gj)];
        }
    }
    let chol = kf
        .cholesky()
        .ok_or_else(|| Error::numerical("stiffness matrix is not positive definite"))?;
    let uf = chol.solve(&ff);

    let mut u = vec![0.0; mesh.num_nodes()];
    for (i, &gi) in free.iter().enumerate() {
        u[gi] = uf[i];
    }
    Ok(u)
}
