//! Structured hexahedral mesh for the generalized Poisson problem.
//!
//! The domain is the box `[-0.05, 0.05] x [-0.5, 0.5] x [-0.5, 0.5]`,
//! discretized with one trilinear element through the thickness and an
//! `n2 x n3` grid in the plane (10 x 10 by default). Homogeneous
//! Dirichlet conditions sit on the four side faces `|x2| = 0.5` or
//! `|x3| = 0.5`; the output face is `x1 = -0.05`.

use crate::error::{Error, Result};

pub const BOX_X1: (f64, f64) = (-0.05, 0.05);
pub const BOX_X2: (f64, f64) = (-0.5, 0.5);
pub const BOX_X3: (f64, f64) = (-0.5, 0.5);

#[derive(Debug, Clone)]
pub struct PoissonMesh {
    /// Elements along x2 and x3 (always one element along x1).
    pub n2: usize,
    pub n3: usize,
    /// Element edge lengths.
    pub h: [f64; 3],
    pub node_coords: Vec<[f64; 3]>,
    /// Trilinear connectivity, 8 node ids per element.
    pub elements: Vec<[usize; 8]>,
    pub dirichlet: Vec<bool>,
    /// Nodes on the output face `x1 = -0.05`, x2 fastest, then x3.
    pub face_nodes: Vec<usize>,
    pub element_centers: Vec<[f64; 3]>,
}

impl PoissonMesh {
    /// The 1 x 10 x 10 mesh used by the calibration benchmark.
    pub fn standard() -> Self {
        Self::with_resolution(10, 10).expect("standard mesh resolution is valid")
    }

    pub fn with_resolution(n2: usize, n3: usize) -> Result<Self> {
        if n2 == 0 || n3 == 0 {
            return Err(Error::input("mesh needs at least one element per direction"));
        }
        let h = [
            BOX_X1.1 - BOX_X1.0,
            (BOX_X2.1 - BOX_X2.0) / n2 as f64,
            (BOX_X3.1 - BOX_X3.0) / n3 as f64,
        ];
        let nn1 = 2;
        let nn2 = n2 + 1;
        let nn3 = n3 + 1;
        let node_id = |i1: usize, i2: usize, i3: usize| i1 + nn1 * (i2 + nn2 * i3);

        let mut node_coords = vec![[0.0; 3]; nn1 * nn2 * nn3];
        let mut dirichlet = vec![false; node_coords.len()];
        for i3 in 0..nn3 {
            for i2 in 0..nn2 {
                for i1 in 0..nn1 {
                    let id = node_id(i1, i2, i3);
                    node_coords[id] = [
                        BOX_X1.0 + i1 as f64 * h[0],
                        BOX_X2.0 + i2 as f64 * h[1],
                        BOX_X3.0 + i3 as f64 * h[2],
                    ];
                    dirichlet[id] = i2 == 0 || i2 == n2 || i3 == 0 || i3 == n3;
                }
            }
        }

        // Local order walks the bottom face counterclockwise, then the top:
        // (-,-,-), (+,-,-), (+,+,-), (-,+,-), then the x3+ copies.
        let mut elements = Vec::with_capacity(n2 * n3);
        let mut element_centers = Vec::with_capacity(n2 * n3);
        for i3 in 0..n3 {
            for i2 in 0..n2 {
                elements.push([
                    node_id(0, i2, i3),
                    node_id(1, i2, i3),
                    node_id(1, i2 + 1, i3),
                    node_id(0, i2 + 1, i3),
                    node_id(0, i2, i3 + 1),
                    node_id(1, i2, i3 + 1),
                    node_id(1, i2 + 1, i3 + 1),
                    node_id(0, i2 + 1, i3 + 1),
                ]);
                element_centers.push([
                    0.0,
                    BOX_X2.0 + (i2 as f64 + 0.5) * h[1],
                    BOX_X3.0 + (i3 as f64 + 0.5) * h[2],
                ]);
            }
        }

        let mut face_nodes = Vec::with_capacity(nn2 * nn3);
        for i3 in 0..nn3 {
            for i2 in 0..nn2 {
                face_nodes.push(node_id(0, i2, i3));
            }
        }

        Ok(PoissonMesh {
            n2,
            n3,
            h,
            node_coords,
            elements,
            dirichlet,
            face_nodes,
            element_centers,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_coords.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }
}
