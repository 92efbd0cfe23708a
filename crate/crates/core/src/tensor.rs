//! Symmetric second-derivative tensors in `R^{N x n x n}`.
//!
//! A [`SymTensor`] stores one `n x n` block per target component. Blocks are
//! kept symmetric in the two derivative indices; [`SymTensor::symmetrize`]
//! enforces this bit-exactly by averaging mirrored entries once and storing
//! the same value in both slots.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymTensor {
    target_dim: usize,
    dim: usize,
    data: Vec<f64>,
}

impl SymTensor {
    pub fn zeros(target_dim: usize, dim: usize) -> Self {
        SymTensor {
            target_dim,
            dim,
            data: vec![0.0; target_dim * dim * dim],
        }
    }

    /// Builds a tensor from raw entries laid out as `[alpha][i][j]`, then
    /// symmetrizes in `(i, j)`.
    pub fn from_raw(target_dim: usize, dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), target_dim * dim * dim);
        let mut t = SymTensor {
            target_dim,
            dim,
            data,
        };
        t.symmetrize();
        t
    }

    /// Scalar case helper: wraps a single symmetric `n x n` matrix.
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols());
        let n = m.nrows();
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(m[(i, j)]);
            }
        }
        SymTensor::from_raw(1, n, data)
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn idx(&self, alpha: usize, i: usize, j: usize) -> usize {
        (alpha * self.dim + i) * self.dim + j
    }

    #[inline]
    pub fn get(&self, alpha: usize, i: usize, j: usize) -> f64 {
        self.data[self.idx(alpha, i, j)]
    }

    #[inline]
    pub fn set(&mut self, alpha: usize, i: usize, j: usize, v: f64) {
        let k = self.idx(alpha, i, j);
        self.data[k] = v;
    }

    /// Sets both `(i, j)` and `(j, i)` to the same value.
    pub fn set_sym(&mut self, alpha: usize, i: usize, j: usize, v: f64) {
        let a = self.idx(alpha, i, j);
        let b = self.idx(alpha, j, i);
        self.data[a] = v;
        self.data[b] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Replaces each block by its symmetric part. After this call
    /// `get(a, i, j) == get(a, j, i)` holds bitwise.
    pub fn symmetrize(&mut self) {
        for alpha in 0..self.target_dim {
            for i in 0..self.dim {
                for j in (i + 1)..self.dim {
                    let a = self.idx(alpha, i, j);
                    let b = self.idx(alpha, j, i);
                    let v = 0.5 * (self.data[a] + self.data[b]);
                    self.data[a] = v;
                    self.data[b] = v;
                }
            }
        }
    }

    /// Frobenius norm of the deviation from symmetry, useful as a diagnostic
    /// before symmetrization.
    pub fn asymmetry_norm(&self) -> f64 {
        let mut s = 0.0;
        for alpha in 0..self.target_dim {
            for i in 0..self.dim {
                for j in 0..self.dim {
                    let d = self.get(alpha, i, j) - self.get(alpha, j, i);
                    s += d * d;
                }
            }
        }
        s.sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &SymTensor) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn add_scaled(&mut self, s: f64, other: &SymTensor) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// Per-component trace: `(sum_i T_{alpha,i,i})_alpha`, the vector that
    /// contracts against `a (x) I`.
    pub fn trace_vector(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.target_dim);
        for alpha in 0..self.target_dim {
            let mut t = 0.0;
            for i in 0..self.dim {
                t += self.get(alpha, i, i);
            }
            out[alpha] = t;
        }
        out
    }

    /// Contraction against a gradient matrix:
    /// `v_i = sum_{beta, j} T_{beta, i, j} * Du_{beta, j}`.
    pub fn contract_gradient(&self, du: &DMatrix<f64>) -> DVector<f64> {
        assert_eq!(du.nrows(), self.target_dim);
        assert_eq!(du.ncols(), self.dim);
        let mut out = DVector::zeros(self.dim);
        for i in 0..self.dim {
            let mut s = 0.0;
            for beta in 0..self.target_dim {
                for j in 0..self.dim {
                    s += self.get(beta, i, j) * du[(beta, j)];
                }
            }
            out[i] = s;
        }
        out
    }

    /// Full double contraction `T : S` over all three indices.
    pub fn dot(&self, other: &SymTensor) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// The block for one target component as a matrix.
    pub fn component(&self, alpha: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(alpha, i, j))
    }
}
