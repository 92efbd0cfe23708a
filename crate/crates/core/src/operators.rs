//! Pointwise quasilinear operators: the infinity-Laplacian system, its
//! tangential/normal splitting, the range-complement projection, and the
//! expanded p-Laplacian.

use crate::error::{Error, Result};
use crate::grid::{gradient_field, hessian_field, GridMap, Jet};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub const DEFAULT_RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "snake_case")]
pub enum OperatorId {
    InfinityFull,
    InfinityTangential,
    InfinityNormal,
    PLaplacianExpanded { p: f64 },
}

impl OperatorId {
    pub fn validate(&self) -> Result<()> {
        if let OperatorId::PLaplacianExpanded { p } = self {
            if !(p.is_finite() && *p > 1.0) {
                return Err(Error::InvalidParameter(format!("p = {p} outside (1, inf)")));
            }
        }
        Ok(())
    }

    pub fn apply(&self, jet: &Jet, rank_tol: f64) -> Result<DVector<f64>> {
        match self {
            OperatorId::InfinityFull => infinity_full(jet, rank_tol),
            OperatorId::InfinityTangential => infinity_tangential(jet),
            OperatorId::InfinityNormal => infinity_normal(jet, rank_tol),
            OperatorId::PLaplacianExpanded { p } => p_laplacian_expanded(jet, *p),
        }
    }
}

/// Orthogonal projection of `R^N` onto the complement of the range of `Du`.
#[derive(Clone, Debug)]
pub struct ProjectionResult {
    pub matrix: DMatrix<f64>,
    pub rank_of_range: usize,
}

/// `P = I - Q Q^T` with `Q` an orthonormal basis of `R(Du)` from the SVD.
/// Singular values at or below `rank_tol * sigma_max` are treated as zero.
pub fn orth_projection(du: &DMatrix<f64>, rank_tol: f64) -> ProjectionResult {
    let nn = du.nrows();
    let svd = du.clone().svd(true, false);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let u = svd.u.expect("left singular vectors requested");
    let mut matrix = DMatrix::<f64>::identity(nn, nn);
    let mut rank = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > rank_tol * sigma_max {
            rank += 1;
            let q = u.column(k);
            for i in 0..nn {
                for j in 0..nn {
                    matrix[(i, j)] -= q[i] * q[j];
                }
            }
        }
    }
    // Exact symmetry regardless of rounding in the accumulation above.
    for i in 0..nn {
        for j in (i + 1)..nn {
            let v = 0.5 * (matrix[(i, j)] + matrix[(j, i)]);
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
        }
    }
    ProjectionResult {
        matrix,
        rank_of_range: rank,
    }
}

fn require_valid(jet: &Jet) -> Result<()> {
    if jet.hessian_valid {
        Ok(())
    } else {
        Err(Error::InvalidJet)
    }
}

/// Tangential part `Du (x) Du : D^2 u`, componentwise
/// `sum_{beta,i,j} D_i u_alpha D_j u_beta D^2_{ij} u_beta`.
pub fn infinity_tangential(jet: &Jet) -> Result<DVector<f64>> {
    require_valid(jet)?;
    let w = jet.hessian.contract_gradient(&jet.gradient);
    Ok(&jet.gradient * w)
}

/// Normal part `|Du|^2 [Du]^perp (Laplacian of u)`.
pub fn infinity_normal(jet: &Jet, rank_tol: f64) -> Result<DVector<f64>> {
    require_valid(jet)?;
    let norm_sq: f64 = jet.gradient.iter().map(|v| v * v).sum();
    let lap = jet.hessian.trace_vector();
    let proj = orth_projection(&jet.gradient, rank_tol);
    Ok(norm_sq * (proj.matrix * lap))
}

/// Full system: tangential plus normal part.
pub fn infinity_full(jet: &Jet, rank_tol: f64) -> Result<DVector<f64>> {
    let t = infinity_tangential(jet)?;
    let n = infinity_normal(jet, rank_tol)?;
    Ok(t + n)
}

/// Expanded (nondivergence) p-Laplacian
/// `((p-2) Du (x) Du + |Du|^2 I) : D^2 u`.
pub fn p_laplacian_expanded(jet: &Jet, p: f64) -> Result<DVector<f64>> {
    if !(p.is_finite() && p > 1.0) {
        return Err(Error::InvalidParameter(format!("p = {p} outside (1, inf)")));
    }
    let t = infinity_tangential(jet)?;
    let norm_sq: f64 = jet.gradient.iter().map(|v| v * v).sum();
    let lap = jet.hessian.trace_vector();
    Ok((p - 2.0) * t + norm_sq * lap)
}

/// Divergence-form residual via the `|Du|^{p-4}` factor. Not applicable at
/// zero-gradient points when p < 4, where the factor is singular.
pub fn p_laplacian_divergence_form(jet: &Jet, p: f64) -> Result<Option<DVector<f64>>> {
    let norm_sq: f64 = jet.gradient.iter().map(|v| v * v).sum();
    if norm_sq == 0.0 && p < 4.0 {
        return Ok(None);
    }
    let expanded = p_laplacian_expanded(jet, p)?;
    Ok(Some(norm_sq.powf(0.5 * (p - 4.0)) * expanded))
}

/// Per-node Euclidean norm of the operator value, with a validity mask
/// mirroring the hessian blow-up flags.
#[derive(Clone, Debug)]
pub struct ResidualField {
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl ResidualField {
    /// Max over unmasked nodes, optionally restricted to an index set.
    pub fn masked_max(&self, nodes: Option<&[usize]>) -> f64 {
        let iter: Box<dyn Iterator<Item = usize>> = match nodes {
            Some(ns) => Box::new(ns.iter().copied()),
            None => Box::new(0..self.values.len()),
        };
        let mut m = 0.0f64;
        for k in iter {
            if self.valid[k] {
                m = m.max(self.values[k]);
            }
        }
        m
    }

    pub fn masked_mean(&self, nodes: Option<&[usize]>) -> f64 {
        let iter: Box<dyn Iterator<Item = usize>> = match nodes {
            Some(ns) => Box::new(ns.iter().copied()),
            None => Box::new(0..self.values.len()),
        };
        let mut s = 0.0;
        let mut c = 0usize;
        for k in iter {
            if self.valid[k] {
                s += self.values[k];
                c += 1;
            }
        }
        if c == 0 {
            0.0
        } else {
            s / c as f64
        }
    }

    pub fn masked_fraction(&self) -> f64 {
        let masked = self.valid.iter().filter(|v| !**v).count();
        masked as f64 / self.valid.len() as f64
    }
}

/// Evaluates `|op(jet)|` at every node from finite-difference jets.
pub fn residual_field(
    u: &GridMap,
    op: &OperatorId,
    rank_tol: f64,
    blowup_threshold: f64,
) -> Result<ResidualField> {
    op.validate()?;
    let grad = gradient_field(u)?;
    let hess = hessian_field(u, blowup_threshold)?;
    let count = u.domain().node_count();
    let mut values = vec![0.0; count];
    let mut valid = vec![true; count];
    for k in 0..count {
        if !hess.is_valid(k) {
            valid[k] = false;
            continue;
        }
        let jet = crate::grid::jet_at(&grad, &hess, k);
        let v = op.apply(&jet, rank_tol)?;
        values[k] = v.norm();
    }
    Ok(ResidualField { values, valid })
}
