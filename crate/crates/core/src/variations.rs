//! Designated affine-variation families, the sup-norm minimality check they
//! feed, and the aggregated consistency verdict over sampled subdomains.
//!
//! Each family anchors at nodes where `|Du|` attains its sup over the
//! subdomain, attaches hessian candidates there, and emits affine maps
//! whose gradients are the designated contractions of candidate and
//! gradient. Constant maps are always admissible members.

use crate::diffuse::{hessian_samples_from_gradient, support_estimate};
use crate::error::{Error, Result};
use crate::functionals::argmax_set;
use crate::grid::{restrict, GradientField, GridDomain, HessianField, SubdomainSpec};
use crate::solutions::AnalyticSolution;
use crate::tensor::SymTensor;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyTag {
    APlusInf,
    AMinusInf,
    AInfC2,
    APlusP,
    AMinusP,
    ATangential,
    ANormal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    fn admits(self, xi: f64) -> bool {
        match self {
            Sign::Plus => xi > 0.0,
            Sign::Minus => xi < 0.0,
        }
    }
}

/// Parameter that generated a family member.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XiValue {
    Scalar(f64),
    Vector(Vec<f64>),
    /// Index of the sampled normal direction plus homogeneous-basis index.
    Normal { direction: usize, homogeneous: Option<usize> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Provenance {
    pub family: FamilyTag,
    pub xi: XiValue,
    pub anchor_node: usize,
    pub anchor_point: Vec<f64>,
    pub candidate: SymTensor,
}

/// `A(z) = offset + gradient * (z - base_point)`; second derivative zero by
/// construction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AffineMap {
    pub base_point: Vec<f64>,
    pub offset: Vec<f64>,
    pub gradient: DMatrix<f64>,
    pub provenance: Option<Provenance>,
}

impl AffineMap {
    pub fn constant_like(dim: usize, target_dim: usize) -> Self {
        AffineMap {
            base_point: vec![0.0; dim],
            offset: vec![0.0; target_dim],
            gradient: DMatrix::zeros(target_dim, dim),
            provenance: None,
        }
    }

    /// The constant member that every family includes.
    pub fn constant_member(dim: usize, target_dim: usize) -> Self {
        let mut a = AffineMap::constant_like(dim, target_dim);
        a.offset = vec![1.0; target_dim];
        a
    }

    pub fn with_gradient(mut self, g: DMatrix<f64>) -> Self {
        self.gradient = g;
        self
    }

    pub fn with_offset(mut self, b: Vec<f64>) -> Self {
        self.offset = b;
        self
    }

    pub fn eval(&self, z: &[f64]) -> DVector<f64> {
        let mut out = DVector::from_column_slice(&self.offset);
        for alpha in 0..self.gradient.nrows() {
            for i in 0..self.gradient.ncols() {
                out[alpha] += self.gradient[(alpha, i)] * (z[i] - self.base_point[i]);
            }
        }
        out
    }

    pub fn is_constant(&self) -> bool {
        self.gradient.iter().all(|&v| v == 0.0)
    }
}

#[derive(Clone, Debug)]
pub struct VariationFamily {
    pub tag: FamilyTag,
    pub subdomain: SubdomainSpec,
    pub members: Vec<AffineMap>,
    /// Total hessian candidates enumerated across anchors, reported with
    /// verdicts since the sampled candidate sets carry no completeness
    /// guarantee.
    pub candidate_count: usize,
}

/// Where the per-anchor hessian candidates come from.
pub enum CandidateSource<'a> {
    /// Closed-form hessian of a reference map; empty on its singular set.
    Analytic(&'a AnalyticSolution),
    /// Finite-difference hessian field; empty where flagged invalid.
    GridHessian(&'a HessianField),
    /// Atoms of the difference-quotient support estimate.
    DiffuseSupport {
        steps_cells: &'a [i64],
        blowup: f64,
        cluster_eps: f64,
        tail_fraction: f64,
    },
    /// Explicit per-node candidate sets.
    Explicit(&'a BTreeMap<usize, Vec<SymTensor>>),
}

impl CandidateSource<'_> {
    pub fn candidates_at(
        &self,
        grad: &GradientField,
        node: usize,
    ) -> Result<Vec<SymTensor>> {
        let domain = grad.domain();
        match self {
            CandidateSource::Analytic(sol) => {
                let x = domain.node_coord(node);
                if sol.singular_set.contains(&x) {
                    Ok(Vec::new())
                } else {
                    Ok(vec![sol.hessian_at(&x)])
                }
            }
            CandidateSource::GridHessian(hess) => {
                if hess.is_valid(node) {
                    Ok(vec![hess.tensor_at(node)])
                } else {
                    Ok(Vec::new())
                }
            }
            CandidateSource::DiffuseSupport {
                steps_cells,
                blowup,
                cluster_eps,
                tail_fraction,
            } => {
                let set = hessian_samples_from_gradient(grad, node, steps_cells, *blowup)?;
                let support = support_estimate(&set, *cluster_eps, *tail_fraction)?;
                Ok(support.atoms.into_iter().map(|(t, _)| t).collect())
            }
            CandidateSource::Explicit(map) => Ok(map.get(&node).cloned().unwrap_or_default()),
        }
    }
}

pub fn default_xi_samples() -> Vec<f64> {
    let mut out: Vec<f64> = (-3..=3).map(|k| -(2f64.powi(k))).collect();
    out.extend((-3..=3).map(|k| 2f64.powi(k)));
    out
}

pub fn default_lambda_samples() -> Vec<f64> {
    (-10..=2).map(|k| 2f64.powi(k)).collect()
}

/// Relative slack tolerance of the minimality check.
pub fn default_slack_tol(sup_norm: f64) -> f64 {
    1e-8 * (1.0 + sup_norm * sup_norm)
}

fn check_scalar(grad: &GradientField) -> Result<()> {
    if grad.target_dim() != 1 {
        return Err(Error::Dimension(
            "scalar family requested for a vector-valued map".into(),
        ));
    }
    Ok(())
}

fn candidate_dims_ok(grad: &GradientField, t: &SymTensor) -> Result<()> {
    if t.target_dim() != grad.target_dim() || t.dim() != grad.domain().dim() {
        return Err(Error::Dimension(
            "hessian candidate shape does not match the map".into(),
        ));
    }
    Ok(())
}

/// Scalar family with `DA = xi * (X_x Du(x))^T` over signed xi samples,
/// anchors in the argmax set, plus constants.
pub fn scalar_infinity_family(
    grad: &GradientField,
    spec: &SubdomainSpec,
    sign: Sign,
    source: &CandidateSource,
    xi_samples: &[f64],
    argmax_rel_tol: f64,
) -> Result<VariationFamily> {
    check_scalar(grad)?;
    let tag = match sign {
        Sign::Plus => FamilyTag::APlusInf,
        Sign::Minus => FamilyTag::AMinusInf,
    };
    build_scalar_family(grad, spec, sign, source, xi_samples, argmax_rel_tol, tag, |_, du, cand| {
        cand.contract_gradient(du)
    })
}

/// Scalar family of the p-Laplacian:
/// `DA = xi ((p-2) X_x + (I : X_x) I) Du(x)`.
pub fn scalar_p_family(
    grad: &GradientField,
    spec: &SubdomainSpec,
    p: f64,
    sign: Sign,
    source: &CandidateSource,
    xi_samples: &[f64],
    argmax_rel_tol: f64,
) -> Result<VariationFamily> {
    check_scalar(grad)?;
    if !(p.is_finite() && p > 1.0) {
        return Err(Error::InvalidParameter(format!("p = {p} outside (1, inf)")));
    }
    let tag = match sign {
        Sign::Plus => FamilyTag::APlusP,
        Sign::Minus => FamilyTag::AMinusP,
    };
    build_scalar_family(grad, spec, sign, source, xi_samples, argmax_rel_tol, tag, move |_, du, cand| {
        let trace = cand.trace_vector()[0];
        let mut v = cand.contract_gradient(du);
        v *= p - 2.0;
        for i in 0..du.ncols() {
            v[i] += trace * du[(0, i)];
        }
        v
    })
}

#[allow(clippy::too_many_arguments)]
fn build_scalar_family(
    grad: &GradientField,
    spec: &SubdomainSpec,
    sign: Sign,
    source: &CandidateSource,
    xi_samples: &[f64],
    argmax_rel_tol: f64,
    tag: FamilyTag,
    direction: impl Fn(&GridDomain, &DMatrix<f64>, &SymTensor) -> DVector<f64>,
) -> Result<VariationFamily> {
    let amax = argmax_set(grad, spec, argmax_rel_tol)?;
    let domain = grad.domain();
    let n = domain.dim();
    let mut members = vec![AffineMap::constant_member(n, 1)];
    let mut candidate_count = 0usize;
    for &anchor in &amax.nodes {
        let du = grad.matrix_at(anchor);
        let anchor_point = domain.node_coord(anchor);
        for cand in source.candidates_at(grad, anchor)? {
            candidate_dims_ok(grad, &cand)?;
            candidate_count += 1;
            let v = direction(domain, &du, &cand);
            for &xi in xi_samples.iter().filter(|&&x| sign.admits(x)) {
                let g = DMatrix::from_fn(1, n, |_, i| xi * v[i]);
                members.push(AffineMap {
                    base_point: anchor_point.clone(),
                    offset: vec![0.0],
                    gradient: g,
                    provenance: Some(Provenance {
                        family: tag,
                        xi: XiValue::Scalar(xi),
                        anchor_node: anchor,
                        anchor_point: anchor_point.clone(),
                        candidate: cand.clone(),
                    }),
                });
            }
        }
    }
    Ok(VariationFamily {
        tag,
        subdomain: spec.clone(),
        members,
        candidate_count,
    })
}

/// Family of tangents of `xi |Du|^2`: members with gradient rows
/// `xi_alpha * D(|Du|^2)(x)`, the gradient of the energy density taken from
/// the discrete hessian as `2 D^2u Du`.
pub fn c2_tangent_family(
    grad: &GradientField,
    hess: &HessianField,
    spec: &SubdomainSpec,
    xi_samples: &[DVector<f64>],
    argmax_rel_tol: f64,
) -> Result<VariationFamily> {
    let amax = argmax_set(grad, spec, argmax_rel_tol)?;
    let domain = grad.domain();
    let n = domain.dim();
    let nn = grad.target_dim();
    let mut members = vec![AffineMap::constant_member(n, nn)];
    let mut candidate_count = 0usize;
    for &anchor in &amax.nodes {
        if !hess.is_valid(anchor) {
            return Err(Error::InvalidJet);
        }
        let du = grad.matrix_at(anchor);
        let cand = hess.tensor_at(anchor);
        candidate_count += 1;
        let mut w = cand.contract_gradient(&du);
        w *= 2.0; // D(|Du|^2) = 2 D^2u Du
        let anchor_point = domain.node_coord(anchor);
        for xi in xi_samples {
            if xi.len() != nn {
                return Err(Error::Dimension("xi sample has wrong length".into()));
            }
            let g = DMatrix::from_fn(nn, n, |alpha, i| xi[alpha] * w[i]);
            members.push(AffineMap {
                base_point: anchor_point.clone(),
                offset: vec![0.0; nn],
                gradient: g,
                provenance: Some(Provenance {
                    family: FamilyTag::AInfC2,
                    xi: XiValue::Vector(xi.iter().cloned().collect()),
                    anchor_node: anchor,
                    anchor_point: anchor_point.clone(),
                    candidate: cand.clone(),
                }),
            });
        }
    }
    Ok(VariationFamily {
        tag: FamilyTag::AInfC2,
        subdomain: spec.clone(),
        members,
        candidate_count,
    })
}

/// Vectorial tangential family: `DA = xi (x) (X_x : Du(x))`.
pub fn vector_tangential_family(
    grad: &GradientField,
    spec: &SubdomainSpec,
    source: &CandidateSource,
    xi_samples: &[DVector<f64>],
    argmax_rel_tol: f64,
) -> Result<VariationFamily> {
    let amax = argmax_set(grad, spec, argmax_rel_tol)?;
    let domain = grad.domain();
    let n = domain.dim();
    let nn = grad.target_dim();
    let mut members = vec![AffineMap::constant_member(n, nn)];
    let mut candidate_count = 0usize;
    for &anchor in &amax.nodes {
        let du = grad.matrix_at(anchor);
        let anchor_point = domain.node_coord(anchor);
        for cand in source.candidates_at(grad, anchor)? {
            candidate_dims_ok(grad, &cand)?;
            candidate_count += 1;
            let v = cand.contract_gradient(&du);
            for xi in xi_samples {
                if xi.len() != nn {
                    return Err(Error::Dimension("xi sample has wrong length".into()));
                }
                let g = DMatrix::from_fn(nn, n, |alpha, i| xi[alpha] * v[i]);
                members.push(AffineMap {
                    base_point: anchor_point.clone(),
                    offset: vec![0.0; nn],
                    gradient: g,
                    provenance: Some(Provenance {
                        family: FamilyTag::ATangential,
                        xi: XiValue::Vector(xi.iter().cloned().collect()),
                        anchor_node: anchor,
                        anchor_point: anchor_point.clone(),
                        candidate: cand.clone(),
                    }),
                });
            }
        }
    }
    Ok(VariationFamily {
        tag: FamilyTag::ATangential,
        subdomain: spec.clone(),
        members,
        candidate_count,
    })
}

/// Affine matrix space `{X : Du(x) : X = -(a (x) I) : X_x}`, parametrized
/// by one particular solution plus an orthonormal basis of the homogeneous
/// space; `{0}` when `Du(x) = 0`.
#[derive(Clone, Debug)]
pub struct NormalMatrixSpace {
    pub anchor_gradient: DMatrix<f64>,
    pub direction: DVector<f64>,
    pub candidate: SymTensor,
    /// `-(a (x) I) : X_x`
    pub rhs: f64,
    pub particular: DMatrix<f64>,
    pub homogeneous_basis: Vec<DMatrix<f64>>,
    pub degenerate: bool,
}

impl NormalMatrixSpace {
    /// A member `particular + sum_k coeffs[k] * basis[k]`.
    pub fn member(&self, coeffs: &[f64]) -> DMatrix<f64> {
        let mut m = self.particular.clone();
        for (c, b) in coeffs.iter().zip(&self.homogeneous_basis) {
            m += *c * b;
        }
        m
    }

    /// `Du(x) : X + (a (x) I) : X_x`, zero for every member.
    pub fn constraint_residual(&self, x: &DMatrix<f64>) -> f64 {
        let dot: f64 = self
            .anchor_gradient
            .iter()
            .zip(x.iter())
            .map(|(a, b)| a * b)
            .sum();
        dot - self.rhs
    }
}

/// Orthonormal vectors spanning the complement of a unit vector, via the
/// Householder reflection that maps it to the first coordinate axis.
fn householder_complement(v: &DVector<f64>) -> Vec<DVector<f64>> {
    let m = v.len();
    let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
    let mut w = v.clone();
    w[0] += sign; // v - alpha e0 with alpha = -sign
    let wn2: f64 = w.iter().map(|x| x * x).sum();
    let mut out = Vec::with_capacity(m - 1);
    for j in 1..m {
        let mut e = DVector::zeros(m);
        e[j] = 1.0;
        let coeff = 2.0 * w[j] / wn2;
        for i in 0..m {
            e[i] -= coeff * w[i];
        }
        out.push(e);
    }
    out
}

pub fn normal_matrix_space(
    du: &DMatrix<f64>,
    candidate: &SymTensor,
    a: &DVector<f64>,
    rank_tol: f64,
) -> NormalMatrixSpace {
    let nn = du.nrows();
    let n = du.ncols();
    let rhs = -a.dot(&candidate.trace_vector());
    let du_norm_sq: f64 = du.iter().map(|v| v * v).sum();
    if du_norm_sq.sqrt() <= rank_tol {
        return NormalMatrixSpace {
            anchor_gradient: du.clone(),
            direction: a.clone(),
            candidate: candidate.clone(),
            rhs,
            particular: DMatrix::zeros(nn, n),
            homogeneous_basis: Vec::new(),
            degenerate: true,
        };
    }
    let particular = (rhs / du_norm_sq) * du;
    // Vectorize Du row-major to match provenance layout, then build the
    // orthonormal complement and reshape back to matrices.
    let mut vecd = DVector::zeros(nn * n);
    for alpha in 0..nn {
        for i in 0..n {
            vecd[alpha * n + i] = du[(alpha, i)];
        }
    }
    vecd /= vecd.norm();
    let homogeneous_basis = householder_complement(&vecd)
        .into_iter()
        .map(|v| DMatrix::from_fn(nn, n, |alpha, i| v[alpha * n + i]))
        .collect();
    NormalMatrixSpace {
        anchor_gradient: du.clone(),
        direction: a.clone(),
        candidate: candidate.clone(),
        rhs,
        particular,
        homogeneous_basis,
        degenerate: false,
    }
}

/// Orthonormal basis of the range of a symmetric projection matrix by
/// modified Gram-Schmidt over its columns.
fn orthonormal_range(p: &DMatrix<f64>, tol: f64) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for j in 0..p.ncols() {
        let mut v: DVector<f64> = p.column(j).into();
        for b in &basis {
            let c = b.dot(&v);
            v -= c * b;
        }
        let norm = v.norm();
        if norm > tol {
            basis.push(v / norm);
        }
    }
    basis
}

/// Vectorial normal family: members `A(z) = n_x + N_x (z - x)` with `n_x`
/// ranging over an orthonormal basis of the complement of `R(Du(x))` and
/// `N_x` drawn from the matching affine matrix space. For surjective
/// gradients only `n_x = 0` exists and the homogeneous members remain; in
/// the scalar case the family degenerates to constants.
pub fn vector_normal_family(
    grad: &GradientField,
    spec: &SubdomainSpec,
    source: &CandidateSource,
    matrix_samples: usize,
    argmax_rel_tol: f64,
    rank_tol: f64,
) -> Result<VariationFamily> {
    let amax = argmax_set(grad, spec, argmax_rel_tol)?;
    let domain = grad.domain();
    let n = domain.dim();
    let nn = grad.target_dim();
    let mut members = vec![AffineMap::constant_member(n, nn)];
    let mut candidate_count = 0usize;
    if nn == 1 {
        return Ok(VariationFamily {
            tag: FamilyTag::ANormal,
            subdomain: spec.clone(),
            members,
            candidate_count,
        });
    }
    for &anchor in &amax.nodes {
        let du = grad.matrix_at(anchor);
        let anchor_point = domain.node_coord(anchor);
        let proj = crate::operators::orth_projection(&du, rank_tol);
        let mut normals = orthonormal_range(&proj.matrix, 1e-8);
        if normals.is_empty() {
            // Surjective gradient: only the trivial direction.
            normals.push(DVector::zeros(nn));
        }
        for cand in source.candidates_at(grad, anchor)? {
            candidate_dims_ok(grad, &cand)?;
            candidate_count += 1;
            for (dir_idx, n_x) in normals.iter().enumerate() {
                let space = normal_matrix_space(&du, &cand, n_x, rank_tol);
                let offset: Vec<f64> = n_x.iter().cloned().collect();
                let mut emit = |g: DMatrix<f64>, homogeneous: Option<usize>| {
                    members.push(AffineMap {
                        base_point: anchor_point.clone(),
                        offset: offset.clone(),
                        gradient: g,
                        provenance: Some(Provenance {
                            family: FamilyTag::ANormal,
                            xi: XiValue::Normal {
                                direction: dir_idx,
                                homogeneous,
                            },
                            anchor_node: anchor,
                            anchor_point: anchor_point.clone(),
                            candidate: cand.clone(),
                        }),
                    });
                };
                emit(space.particular.clone(), None);
                for k in 0..matrix_samples.min(space.homogeneous_basis.len()) {
                    emit(space.member(&one_hot(k, matrix_samples)), Some(k));
                }
            }
        }
    }
    Ok(VariationFamily {
        tag: FamilyTag::ANormal,
        subdomain: spec.clone(),
        members,
        candidate_count,
    })
}

fn one_hot(k: usize, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len.max(k + 1)];
    v[k] = 1.0;
    v
}

/// One minimality record: `slack = ||Du + lambda DA|| - ||Du||` over the
/// subdomain, in the sup norm of `|Du|`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VariationalReport {
    pub family: FamilyTag,
    pub member: usize,
    pub anchor_node: Option<usize>,
    pub lambda: f64,
    pub sup_base: f64,
    pub sup_perturbed: f64,
    pub slack: f64,
    pub pass: bool,
}

/// Evaluates the minimality inequality for each member over a lambda sweep.
/// Pass means `slack >= -tol` with the default relative tolerance unless
/// overridden.
pub fn minimality_check(
    grad: &GradientField,
    spec: &SubdomainSpec,
    family: &VariationFamily,
    lambdas: &[f64],
    tol_slack: Option<f64>,
) -> Result<Vec<VariationalReport>> {
    let nodes = restrict(grad.domain(), spec)?;
    let n = grad.domain().dim();
    let nn = grad.target_dim();
    let sup_base = crate::functionals::sup_norm_over(grad, &nodes);
    let tol = tol_slack.unwrap_or_else(|| default_slack_tol(sup_base));
    let mut reports = Vec::with_capacity(family.members.len() * lambdas.len());
    let mut g = vec![0.0; nn * n];
    for (mi, member) in family.members.iter().enumerate() {
        for alpha in 0..nn {
            for i in 0..n {
                g[alpha * n + i] = member.gradient[(alpha, i)];
            }
        }
        let anchor_node = member.provenance.as_ref().map(|p| p.anchor_node);
        for &lambda in lambdas {
            let mut sup_sq = 0.0f64;
            for &k in &nodes {
                let s = grad.at(k);
                let mut acc = 0.0;
                for (a, b) in s.iter().zip(&g) {
                    let v = a + lambda * b;
                    acc += v * v;
                }
                if acc > sup_sq {
                    sup_sq = acc;
                }
            }
            let sup_perturbed = sup_sq.sqrt();
            let slack = sup_perturbed - sup_base;
            reports.push(VariationalReport {
                family: family.tag,
                member: mi,
                anchor_node,
                lambda,
                sup_base,
                sup_perturbed,
                slack,
                pass: slack >= -tol,
            });
        }
    }
    Ok(reports)
}

/// Uniform random node-aligned boxes, compactly contained with a cell
/// margin and a minimum side length.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SubdomainSampler {
    pub margin_cells: usize,
    pub min_side_cells: usize,
}

impl Default for SubdomainSampler {
    fn default() -> Self {
        SubdomainSampler {
            margin_cells: 2,
            min_side_cells: 6,
        }
    }
}

impl SubdomainSampler {
    pub fn sample<R: Rng>(&self, domain: &GridDomain, rng: &mut R) -> Result<SubdomainSpec> {
        let n = domain.dim();
        let mut lo = vec![0.0; n];
        let mut hi = vec![0.0; n];
        for axis in 0..n {
            let cells = domain.resolution()[axis] - 1;
            if cells < 2 * self.margin_cells + self.min_side_cells {
                return Err(Error::Subdomain(format!(
                    "axis {axis} too small for the subdomain sampler"
                )));
            }
            let max_lo = cells - self.margin_cells - self.min_side_cells;
            let lo_cell = rng.gen_range(self.margin_cells..=max_lo);
            let max_side = cells - self.margin_cells - lo_cell;
            let side = rng.gen_range(self.min_side_cells..=max_side);
            let (a, _) = domain.bounds()[axis];
            let h = domain.spacing()[axis];
            lo[axis] = a + lo_cell as f64 * h;
            hi[axis] = a + (lo_cell + side) as f64 * h;
        }
        Ok(SubdomainSpec::bbox(&lo, &hi))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Witness {
    pub subdomain: SubdomainSpec,
    pub member: AffineMap,
    pub report: VariationalReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CharacterizationVerdict {
    /// True iff every report over every sampled subdomain passed.
    pub consistent: bool,
    pub min_slack: f64,
    pub witness: Option<Witness>,
    pub n_subdomains: usize,
    pub n_members: usize,
    pub n_reports: usize,
    pub candidate_count: usize,
}

/// Aggregates [`minimality_check`] over sampled subdomains. The builder
/// constructs the designated family per subdomain; the worst slack and its
/// witness are recorded.
pub fn characterization_verdict<R: Rng>(
    grad: &GradientField,
    mut family_builder: impl FnMut(&SubdomainSpec) -> Result<VariationFamily>,
    lambdas: &[f64],
    n_subdomains: usize,
    sampler: &SubdomainSampler,
    rng: &mut R,
    tol_slack: Option<f64>,
) -> Result<CharacterizationVerdict> {
    if n_subdomains == 0 {
        return Err(Error::InvalidParameter(
            "at least one subdomain is required".into(),
        ));
    }
    let mut consistent = true;
    let mut min_slack = f64::INFINITY;
    let mut witness = None;
    let mut n_members = 0;
    let mut n_reports = 0;
    let mut candidate_count = 0;
    for _ in 0..n_subdomains {
        let spec = sampler.sample(grad.domain(), rng)?;
        let family = family_builder(&spec)?;
        n_members += family.members.len();
        candidate_count += family.candidate_count;
        let reports = minimality_check(grad, &spec, &family, lambdas, tol_slack)?;
        n_reports += reports.len();
        for r in reports {
            if !r.pass {
                consistent = false;
            }
            if r.slack < min_slack {
                min_slack = r.slack;
                witness = Some(Witness {
                    subdomain: spec.clone(),
                    member: family.members[r.member].clone(),
                    report: r,
                });
            }
        }
    }
    Ok(CharacterizationVerdict {
        consistent,
        min_slack,
        witness,
        n_subdomains,
        n_members,
        n_reports,
        candidate_count,
    })
}
