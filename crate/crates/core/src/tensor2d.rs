//! Tensor-product SBP operators on the reference square `[-1, 1]^2`.
//!
//! Node `(ξ_i, η_j)` is stored at index `k = i N_η + j`, so `D_ξ = D ⊗ I` and
//! `D_η = I ⊗ D`. Face traces are ordered by increasing tangential coordinate.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::sbp1d::SbpOperator1D;
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Face {
    /// `ξ = -1`
    West,
    /// `ξ = +1`
    East,
    /// `η = -1`
    South,
    /// `η = +1`
    North,
}

impl Face {
    pub const ALL: [Face; 4] = [Face::West, Face::East, Face::South, Face::North];
}

#[derive(Debug, Clone)]
pub struct Operator2D {
    op_xi: Arc<SbpOperator1D>,
    op_eta: Arc<SbpOperator1D>,
    h: Vec<f64>,
    d_xi: CsrMatrix,
    d_eta: CsrMatrix,
}

impl Operator2D {
    pub fn new(op_xi: Arc<SbpOperator1D>, op_eta: Arc<SbpOperator1D>) -> Self {
        let (nx, ny) = (op_xi.len(), op_eta.len());
        let h = (0..nx * ny)
            .map(|k| op_xi.h_diag()[k / ny] * op_eta.h_diag()[k % ny])
            .collect();
        let d_xi = op_xi.d_sparse().kron(&CsrMatrix::identity(ny));
        let d_eta = CsrMatrix::identity(nx).kron(op_eta.d_sparse());
        Self {
            op_xi,
            op_eta,
            h,
            d_xi,
            d_eta,
        }
    }

    pub fn op_xi(&self) -> &SbpOperator1D {
        &self.op_xi
    }
    pub fn op_eta(&self) -> &SbpOperator1D {
        &self.op_eta
    }
    pub fn n_xi(&self) -> usize {
        self.op_xi.len()
    }
    pub fn n_eta(&self) -> usize {
        self.op_eta.len()
    }
    pub fn len(&self) -> usize {
        self.n_xi() * self.n_eta()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Diagonal of `H = H_ξ ⊗ H_η`.
    pub fn h_diag(&self) -> &[f64] {
        &self.h
    }
    pub fn d_xi(&self) -> &CsrMatrix {
        &self.d_xi
    }
    pub fn d_eta(&self) -> &CsrMatrix {
        &self.d_eta
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n_eta() + j
    }

    /// `out = D_ξ u` without forming the Kronecker product.
    pub fn apply_d_xi(&self, u: &[f64], out: &mut [f64]) {
        let (nx, ny) = (self.n_xi(), self.n_eta());
        let d = self.op_xi.d_sparse();
        for i in 0..nx {
            let row = &mut out[i * ny..(i + 1) * ny];
            row.fill(0.0);
            for (l, c) in d.row(i) {
                let src = &u[l * ny..(l + 1) * ny];
                for (o, s) in row.iter_mut().zip(src) {
                    *o += c * s;
                }
            }
        }
    }

    /// `out = D_η u` without forming the Kronecker product.
    pub fn apply_d_eta(&self, u: &[f64], out: &mut [f64]) {
        let ny = self.n_eta();
        for (src, dst) in u.chunks_exact(ny).zip(out.chunks_exact_mut(ny)) {
            self.op_eta.apply(src, dst);
        }
    }

    /// Number of nodes on a face.
    pub fn face_len(&self, face: Face) -> usize {
        match face {
            Face::West | Face::East => self.n_eta(),
            Face::South | Face::North => self.n_xi(),
        }
    }

    /// Indices of the face nodes in trace order.
    pub fn face_indices(&self, face: Face) -> Vec<usize> {
        let (nx, ny) = (self.n_xi(), self.n_eta());
        match face {
            Face::West => (0..ny).collect(),
            Face::East => ((nx - 1) * ny..nx * ny).collect(),
            Face::South => (0..nx).map(|i| i * ny).collect(),
            Face::North => (0..nx).map(|i| i * ny + ny - 1).collect(),
        }
    }

    /// The 1D operator tangential to a face (its nodes and norm live on the face).
    pub fn face_operator(&self, face: Face) -> &SbpOperator1D {
        match face {
            Face::West | Face::East => &self.op_eta,
            Face::South | Face::North => &self.op_xi,
        }
    }

    pub fn trace(&self, face: Face, u: &[f64]) -> Vec<f64> {
        self.face_indices(face).into_iter().map(|k| u[k]).collect()
    }

    /// Restriction matrix `R_face` (face length × N).
    pub fn restriction(&self, face: Face) -> CsrMatrix {
        let idx = self.face_indices(face);
        let trip = idx.iter().enumerate().map(|(r, &k)| (r, k, 1.0)).collect();
        CsrMatrix::from_triplets(idx.len(), self.len(), trip)
    }

    /// `E_face = R^T H_face R`.
    pub fn boundary_matrix(&self, face: Face) -> CsrMatrix {
        let hf = self.face_operator(face).h_diag();
        let trip = self
            .face_indices(face)
            .into_iter()
            .zip(hf)
            .map(|(k, &h)| (k, k, h))
            .collect();
        CsrMatrix::from_triplets(self.len(), self.len(), trip)
    }
}
