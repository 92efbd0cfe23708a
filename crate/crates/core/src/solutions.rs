//! Analytic reference maps with closed-form derivatives, bump
//! perturbations, and a descent solver for the p-Dirichlet problem.

use crate::error::{Error, Result};
use crate::grid::{GridDomain, GridMap};
use crate::tensor::SymTensor;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolutionClass {
    InfinityHarmonic,
    PHarmonic { p: f64 },
    Harmonic,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularSet {
    Empty,
    /// Every hyperplane `x_i = 0`.
    CoordinateAxes,
    Origin,
}

impl SingularSet {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            SingularSet::Empty => false,
            SingularSet::CoordinateAxes => x.iter().any(|&v| v == 0.0),
            SingularSet::Origin => x.iter().all(|&v| v == 0.0),
        }
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        match self {
            SingularSet::Empty => f64::INFINITY,
            SingularSet::CoordinateAxes => x.iter().fold(f64::INFINITY, |m, v| m.min(v.abs())),
            SingularSet::Origin => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }
}

type ValueFn = Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
type GradFn = Box<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
type HessFn = Box<dyn Fn(&[f64]) -> SymTensor + Send + Sync>;

/// A reference map with closed-form value, gradient and hessian.
pub struct AnalyticSolution {
    pub id: String,
    pub dim: usize,
    pub target_dim: usize,
    pub class: SolutionClass,
    pub singular_set: SingularSet,
    /// A box on which the map is smooth, used as the default sampling domain.
    pub default_bounds: Vec<(f64, f64)>,
    value: ValueFn,
    gradient: GradFn,
    hessian: HessFn,
}

impl AnalyticSolution {
    pub fn value_into(&self, x: &[f64], out: &mut [f64]) {
        (self.value)(x, out)
    }

    pub fn value_at(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.target_dim];
        self.value_into(x, &mut out);
        out
    }

    pub fn gradient_at(&self, x: &[f64]) -> DMatrix<f64> {
        (self.gradient)(x)
    }

    pub fn hessian_at(&self, x: &[f64]) -> SymTensor {
        (self.hessian)(x)
    }

    /// Samples the map at every grid node. Evaluation on the declared
    /// singular set is refused unless acknowledged; values must be finite
    /// either way.
    pub fn sample(&self, domain: &GridDomain, acknowledge_singular: bool) -> Result<GridMap> {
        if domain.dim() != self.dim {
            return Err(Error::Dimension(format!(
                "`{}` is defined on dimension {}, domain has {}",
                self.id,
                self.dim,
                domain.dim()
            )));
        }
        let count = domain.node_count();
        let mut values = vec![0.0; count * self.target_dim];
        let mut coord = vec![0.0; self.dim];
        for k in 0..count {
            domain.node_coord_into(k, &mut coord);
            if !acknowledge_singular && self.singular_set.contains(&coord) {
                return Err(Error::Singularity {
                    id: self.id.clone(),
                    point: coord,
                });
            }
            let out = &mut values[k * self.target_dim..(k + 1) * self.target_dim];
            self.value_into(&coord, out);
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    id: self.id.clone(),
                    point: coord,
                });
            }
        }
        GridMap::new(domain.clone(), self.target_dim, values)
    }

    pub fn default_domain(&self, resolution: usize) -> Result<GridDomain> {
        let res = vec![resolution; self.dim];
        GridDomain::new(&self.default_bounds, &res)
    }

    /// Affine map `u(x) = offset + G x`.
    pub fn linear(offset: Vec<f64>, g: DMatrix<f64>) -> Self {
        let nn = g.nrows();
        let n = g.ncols();
        assert_eq!(offset.len(), nn);
        let g_val = g.clone();
        let g_grad = g.clone();
        AnalyticSolution {
            id: format!("linear_{nn}x{n}"),
            dim: n,
            target_dim: nn,
            class: SolutionClass::InfinityHarmonic,
            singular_set: SingularSet::Empty,
            default_bounds: vec![(0.0, 1.0); n],
            value: Box::new(move |x, out| {
                for alpha in 0..nn {
                    let mut s = offset[alpha];
                    for i in 0..n {
                        s += g_val[(alpha, i)] * x[i];
                    }
                    out[alpha] = s;
                }
            }),
            gradient: Box::new(move |_| g_grad.clone()),
            hessian: Box::new(move |_| SymTensor::zeros(nn, n)),
        }
    }

    /// `u(x, y) = |x|^{4/3} - |y|^{4/3}`, infinity-harmonic away from the
    /// coordinate axes where the second derivatives blow up.
    pub fn aronsson() -> Self {
        let p43 = |t: f64| t.abs().powf(4.0 / 3.0);
        let d1 = |t: f64| (4.0 / 3.0) * t.signum() * t.abs().powf(1.0 / 3.0);
        let d2 = |t: f64| (4.0 / 9.0) * t.abs().powf(-2.0 / 3.0);
        AnalyticSolution {
            id: "aronsson".into(),
            dim: 2,
            target_dim: 1,
            class: SolutionClass::InfinityHarmonic,
            singular_set: SingularSet::CoordinateAxes,
            default_bounds: vec![(1.0, 2.0), (1.0, 2.0)],
            value: Box::new(move |x, out| out[0] = p43(x[0]) - p43(x[1])),
            gradient: Box::new(move |x| {
                DMatrix::from_row_slice(1, 2, &[d1(x[0]), -d1(x[1])])
            }),
            hessian: Box::new(move |x| {
                let mut t = SymTensor::zeros(1, 2);
                t.set(0, 0, 0, d2(x[0]));
                t.set(0, 1, 1, -d2(x[1]));
                t
            }),
        }
    }

    /// Radial p-harmonic profile `|x|^{(p-n)/(p-1)}` for `p != n`,
    /// singular at the origin.
    pub fn radial_p_harmonic(p: f64, n: usize) -> Self {
        assert!(p > 1.0 && p.is_finite());
        assert!((p - n as f64).abs() > 1e-12, "use log_radial for p = n");
        let gamma = (p - n as f64) / (p - 1.0);
        AnalyticSolution {
            id: format!("radial_p{p}_n{n}"),
            dim: n,
            target_dim: 1,
            class: SolutionClass::PHarmonic { p },
            singular_set: SingularSet::Origin,
            default_bounds: vec![(1.0, 2.0); n],
            value: Box::new(move |x, out| {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                out[0] = r2.powf(0.5 * gamma);
            }),
            gradient: Box::new(move |x| {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let c = gamma * r.powf(gamma - 2.0);
                DMatrix::from_fn(1, n, |_, i| c * x[i])
            }),
            hessian: Box::new(move |x| {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let c1 = gamma * r.powf(gamma - 2.0);
                let c2 = gamma * (gamma - 2.0) * r.powf(gamma - 4.0);
                let mut t = SymTensor::zeros(1, n);
                for i in 0..n {
                    for j in i..n {
                        let v = c2 * x[i] * x[j] + if i == j { c1 } else { 0.0 };
                        t.set_sym(0, i, j, v);
                    }
                }
                t
            }),
        }
    }

    /// `u = log |x|`, the radial n-harmonic profile for `p = n`.
    pub fn log_radial(n: usize) -> Self {
        AnalyticSolution {
            id: format!("log_radial_n{n}"),
            dim: n,
            target_dim: 1,
            class: SolutionClass::PHarmonic { p: n as f64 },
            singular_set: SingularSet::Origin,
            default_bounds: vec![(1.0, 2.0); n],
            value: Box::new(move |x, out| {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                out[0] = 0.5 * r2.ln();
            }),
            gradient: Box::new(move |x| {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                DMatrix::from_fn(1, n, |_, i| x[i] / r2)
            }),
            hessian: Box::new(move |x| {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                let mut t = SymTensor::zeros(1, n);
                for i in 0..n {
                    for j in i..n {
                        let v = -2.0 * x[i] * x[j] / (r2 * r2)
                            + if i == j { 1.0 / r2 } else { 0.0 };
                        t.set_sym(0, i, j, v);
                    }
                }
                t
            }),
        }
    }

    /// Harmonic saddle `u = x^2 - y^2`.
    pub fn harmonic_saddle() -> Self {
        AnalyticSolution {
            id: "harmonic_saddle".into(),
            dim: 2,
            target_dim: 1,
            class: SolutionClass::Harmonic,
            singular_set: SingularSet::Empty,
            default_bounds: vec![(0.0, 1.0), (0.0, 1.0)],
            value: Box::new(|x, out| out[0] = x[0] * x[0] - x[1] * x[1]),
            gradient: Box::new(|x| DMatrix::from_row_slice(1, 2, &[2.0 * x[0], -2.0 * x[1]])),
            hessian: Box::new(|_| {
                let mut t = SymTensor::zeros(1, 2);
                t.set(0, 0, 0, 2.0);
                t.set(0, 1, 1, -2.0);
                t
            }),
        }
    }

    /// Harmonic, non-polynomial: `u = e^x sin y`. Useful for convergence
    /// order measurements where polynomial members are exact.
    pub fn exp_sin() -> Self {
        AnalyticSolution {
            id: "exp_sin".into(),
            dim: 2,
            target_dim: 1,
            class: SolutionClass::Harmonic,
            singular_set: SingularSet::Empty,
            default_bounds: vec![(0.0, 1.0), (0.0, 1.0)],
            value: Box::new(|x, out| out[0] = x[0].exp() * x[1].sin()),
            gradient: Box::new(|x| {
                let e = x[0].exp();
                DMatrix::from_row_slice(1, 2, &[e * x[1].sin(), e * x[1].cos()])
            }),
            hessian: Box::new(|x| {
                let e = x[0].exp();
                let mut t = SymTensor::zeros(1, 2);
                t.set(0, 0, 0, e * x[1].sin());
                t.set(0, 1, 1, -e * x[1].sin());
                t.set_sym(0, 0, 1, e * x[1].cos());
                t
            }),
        }
    }

    /// Quadratic non-solution `u = |x|^2 / 2` with `Du = x`, `D^2 u = I`.
    pub fn quadratic_bowl(n: usize) -> Self {
        AnalyticSolution {
            id: format!("quadratic_bowl_n{n}"),
            dim: n,
            target_dim: 1,
            class: SolutionClass::None,
            singular_set: SingularSet::Empty,
            default_bounds: vec![(1.0, 2.0); n],
            value: Box::new(|x, out| out[0] = 0.5 * x.iter().map(|v| v * v).sum::<f64>()),
            gradient: Box::new(move |x| DMatrix::from_fn(1, n, |_, i| x[i])),
            hessian: Box::new(move |_| {
                let mut t = SymTensor::zeros(1, n);
                for i in 0..n {
                    t.set(0, i, i, 1.0);
                }
                t
            }),
        }
    }

    /// Scalar-to-vector embedding `u = (f, 0, ..., 0)`.
    pub fn embedded(inner: AnalyticSolution, target_dim: usize) -> Self {
        assert_eq!(inner.target_dim, 1);
        assert!(target_dim >= 1);
        let n = inner.dim;
        let id = format!("{}_embed{}", inner.id, target_dim);
        let inner = std::sync::Arc::new(inner);
        let v = inner.clone();
        let g = inner.clone();
        let h = inner.clone();
        AnalyticSolution {
            id,
            dim: n,
            target_dim,
            class: inner.class.clone(),
            singular_set: inner.singular_set.clone(),
            default_bounds: inner.default_bounds.clone(),
            value: Box::new(move |x, out| {
                out.fill(0.0);
                let mut s = [0.0];
                v.value_into(x, &mut s);
                out[0] = s[0];
            }),
            gradient: Box::new(move |x| {
                let inner_g = g.gradient_at(x);
                let mut m = DMatrix::zeros(target_dim, n);
                for i in 0..n {
                    m[(0, i)] = inner_g[(0, i)];
                }
                m
            }),
            hessian: Box::new(move |x| {
                let inner_h = h.hessian_at(x);
                let mut t = SymTensor::zeros(target_dim, n);
                for i in 0..n {
                    for j in 0..n {
                        t.set(0, i, j, inner_h.get(0, i, j));
                    }
                }
                t
            }),
        }
    }

    /// Compares the closed-form gradient and hessian against centered
    /// finite differences of the value function at one point.
    pub fn cross_validate(&self, x: &[f64], h: f64) -> (f64, f64) {
        let n = self.dim;
        let nn = self.target_dim;
        let eval = |x: &[f64]| self.value_at(x);
        let mut grad_err = 0.0f64;
        let g = self.gradient_at(x);
        for i in 0..n {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            let fp = eval(&xp);
            let fm = eval(&xm);
            for alpha in 0..nn {
                let fd = (fp[alpha] - fm[alpha]) / (2.0 * h);
                grad_err = grad_err.max((fd - g[(alpha, i)]).abs());
            }
        }
        let mut hess_err = 0.0f64;
        let t = self.hessian_at(x);
        let f0 = eval(x);
        for i in 0..n {
            for j in 0..n {
                for alpha in 0..nn {
                    let fd = if i == j {
                        let mut xp = x.to_vec();
                        let mut xm = x.to_vec();
                        xp[i] += h;
                        xm[i] -= h;
                        (eval(&xp)[alpha] - 2.0 * f0[alpha] + eval(&xm)[alpha]) / (h * h)
                    } else {
                        let shift = |si: f64, sj: f64| {
                            let mut y = x.to_vec();
                            y[i] += si * h;
                            y[j] += sj * h;
                            eval(&y)[alpha]
                        };
                        (shift(1.0, 1.0) - shift(1.0, -1.0) - shift(-1.0, 1.0)
                            + shift(-1.0, -1.0))
                            / (4.0 * h * h)
                    };
                    hess_err = hess_err.max((fd - t.get(alpha, i, j)).abs());
                }
            }
        }
        (grad_err, hess_err)
    }
}

/// The default registry of reference maps.
pub fn corpus() -> Vec<AnalyticSolution> {
    vec![
        AnalyticSolution::linear(vec![0.0], DMatrix::from_row_slice(1, 2, &[1.0, 0.0])),
        AnalyticSolution::aronsson(),
        AnalyticSolution::radial_p_harmonic(4.0, 2),
        AnalyticSolution::log_radial(2),
        AnalyticSolution::harmonic_saddle(),
        AnalyticSolution::exp_sin(),
        AnalyticSolution::quadratic_bowl(2),
        AnalyticSolution::embedded(AnalyticSolution::aronsson(), 2),
    ]
}

pub fn find(id: &str) -> Result<AnalyticSolution> {
    corpus()
        .into_iter()
        .find(|s| s.id == id)
        .ok_or_else(|| Error::UnknownSolution(id.into()))
}

/// The standard compactly supported bump, equal to 1 at the center and
/// exactly 0 outside the ball of the given radius.
pub fn bump(x: &[f64], center: &[f64], radius: f64) -> f64 {
    let r2: f64 = x
        .iter()
        .zip(center)
        .map(|(&a, &c)| (a - c) * (a - c))
        .sum::<f64>()
        / (radius * radius);
    if r2 >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - r2)).exp()
    }
}

/// Adds `delta * bump` to every component. The bump support must lie inside
/// the open domain; outside the support the output equals the input
/// bit-exactly.
pub fn perturb(map: &GridMap, center: &[f64], radius: f64, delta: f64) -> Result<GridMap> {
    let domain = map.domain();
    if center.len() != domain.dim() {
        return Err(Error::Dimension("bump center dimension mismatch".into()));
    }
    if radius <= 0.0 || !radius.is_finite() {
        return Err(Error::InvalidParameter("bump radius must be positive".into()));
    }
    for (axis, &(a, b)) in domain.bounds().iter().enumerate() {
        if center[axis] - radius <= a || center[axis] + radius >= b {
            return Err(Error::Subdomain(format!(
                "bump support exits the domain on axis {axis}"
            )));
        }
    }
    let nn = map.target_dim();
    let mut values = map.values().to_vec();
    let mut coord = vec![0.0; domain.dim()];
    for k in 0..domain.node_count() {
        domain.node_coord_into(k, &mut coord);
        let b = bump(&coord, center, radius);
        if b != 0.0 {
            for alpha in 0..nn {
                values[k * nn + alpha] += delta * b;
            }
        }
    }
    GridMap::new(domain.clone(), nn, values)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepRule {
    Fixed { step: f64 },
    BarzilaiBorwein,
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::BarzilaiBorwein
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverConfig {
    pub p: f64,
    /// Stop when the energy decrement of an accepted sweep falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    #[serde(default)]
    pub step_rule: StepRule,
    /// Gradient regularization used only for p < 2.
    #[serde(default = "default_regularization")]
    pub regularization: f64,
}

fn default_regularization() -> f64 {
    1e-8
}

impl SolverConfig {
    pub fn new(p: f64) -> Self {
        SolverConfig {
            p,
            tolerance: 1e-12,
            max_iterations: 20_000,
            step_rule: StepRule::BarzilaiBorwein,
            regularization: default_regularization(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "p = {} outside (1, inf)",
                self.p
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidParameter("tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceLog {
    /// Energy after each accepted sweep, starting with the initial guess.
    pub energies: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Regularization actually applied (0 for p >= 2).
    pub regularization: f64,
}

/// Cell-based p-Dirichlet energy: one-point quadrature of `|Du|^p` with the
/// cell-centered multilinear gradient. Constant-gradient maps are exact
/// critical points, so affine data is reproduced to solver tolerance.
struct CellEnergy<'a> {
    domain: &'a GridDomain,
    p: f64,
    eps2: f64,
    corners: Vec<(usize, [f64; 3])>, // node offset and per-axis sign
    cell_nodes: Vec<usize>,          // flat index of cell origin
    vol: f64,
    inv_scale: [f64; 3], // 1 / (2^{n-1} h_i)
}

impl<'a> CellEnergy<'a> {
    fn new(domain: &'a GridDomain, p: f64, eps: f64) -> Self {
        let n = domain.dim();
        let strides = domain.strides();
        let mut corners = Vec::new();
        for mask in 0..(1usize << n) {
            let mut offset = 0usize;
            let mut sign = [0.0f64; 3];
            for axis in 0..n {
                if mask & (1 << axis) != 0 {
                    offset += strides[axis];
                    sign[axis] = 1.0;
                } else {
                    sign[axis] = -1.0;
                }
            }
            corners.push((offset, sign));
        }
        let mut cell_nodes = Vec::new();
        let res = domain.resolution();
        let count = domain.node_count();
        for node in 0..count {
            let m = domain.multi_index(node);
            if (0..n).all(|axis| m[axis] + 1 < res[axis]) {
                cell_nodes.push(node);
            }
        }
        let vol: f64 = domain.spacing().iter().product();
        let mut inv_scale = [0.0f64; 3];
        let denom = (1usize << (n - 1)) as f64;
        for axis in 0..n {
            inv_scale[axis] = 1.0 / (denom * domain.spacing()[axis]);
        }
        CellEnergy {
            domain,
            p,
            eps2: eps * eps,
            corners,
            cell_nodes,
            vol,
            inv_scale,
        }
    }

    fn cell_gradient(&self, u: &[f64], cell: usize, g: &mut [f64; 3]) {
        let n = self.domain.dim();
        g.fill(0.0);
        for &(offset, sign) in &self.corners {
            let v = u[cell + offset];
            for axis in 0..n {
                g[axis] += sign[axis] * v;
            }
        }
        for axis in 0..n {
            g[axis] *= self.inv_scale[axis];
        }
    }

    fn energy(&self, u: &[f64]) -> f64 {
        let mut e = 0.0;
        let mut g = [0.0f64; 3];
        for &cell in &self.cell_nodes {
            self.cell_gradient(u, cell, &mut g);
            let s: f64 = g.iter().map(|v| v * v).sum();
            e += self.vol * (s + self.eps2).powf(0.5 * self.p);
        }
        e
    }

    /// Gradient of the energy with respect to interior node values;
    /// boundary entries are left at zero (Dirichlet projection).
    fn gradient(&self, u: &[f64], out: &mut [f64]) {
        let n = self.domain.dim();
        out.fill(0.0);
        let mut g = [0.0f64; 3];
        for &cell in &self.cell_nodes {
            self.cell_gradient(u, cell, &mut g);
            let s: f64 = g.iter().map(|v| v * v).sum();
            let w = self.vol * self.p * (s + self.eps2).powf(0.5 * self.p - 1.0);
            for &(offset, sign) in &self.corners {
                let mut acc = 0.0;
                for axis in 0..n {
                    acc += g[axis] * sign[axis] * self.inv_scale[axis];
                }
                out[cell + offset] += w * acc;
            }
        }
        for node in 0..self.domain.node_count() {
            if self.domain.is_boundary(node) {
                out[node] = 0.0;
            }
        }
    }
}

/// Multilinear interpolant of the 2^n corner values of the boundary data,
/// with the boundary nodes themselves overwritten exactly.
fn initial_guess(domain: &GridDomain, boundary: &[f64]) -> Vec<f64> {
    let n = domain.dim();
    let res = domain.resolution();
    let count = domain.node_count();
    let mut corner_vals = Vec::new();
    for mask in 0..(1usize << n) {
        let mut m = [0usize; 3];
        for axis in 0..n {
            m[axis] = if mask & (1 << axis) != 0 {
                res[axis] - 1
            } else {
                0
            };
        }
        corner_vals.push(boundary[domain.flat_index(&m[..n])]);
    }
    let mut u = vec![0.0; count];
    for node in 0..count {
        if domain.is_boundary(node) {
            u[node] = boundary[node];
            continue;
        }
        let m = domain.multi_index(node);
        let mut v = 0.0;
        for (mask, &cv) in corner_vals.iter().enumerate() {
            let mut w = 1.0;
            for axis in 0..n {
                let t = m[axis] as f64 / (res[axis] - 1) as f64;
                w *= if mask & (1 << axis) != 0 { t } else { 1.0 - t };
            }
            v += w * cv;
        }
        u[node] = v;
    }
    u
}

/// Minimizes the discrete p-Dirichlet energy over interior nodes with the
/// boundary values of `boundary` held fixed. Backtracking keeps the sweep
/// energies nonincreasing; the log records them.
pub fn p_harmonic_solve(
    domain: &GridDomain,
    boundary: &GridMap,
    config: &SolverConfig,
) -> Result<(GridMap, ConvergenceLog)> {
    config.validate()?;
    if boundary.target_dim() != 1 {
        return Err(Error::InvalidParameter(
            "the p-Dirichlet solver handles scalar maps only".into(),
        ));
    }
    if boundary.domain() != domain {
        return Err(Error::Dimension(
            "boundary trace domain differs from solve domain".into(),
        ));
    }
    let eps = if config.p < 2.0 {
        config.regularization
    } else {
        0.0
    };
    let energy = CellEnergy::new(domain, config.p, eps);
    let mut u = initial_guess(domain, boundary.values());
    let count = domain.node_count();
    let mut grad = vec![0.0; count];
    let mut e = energy.energy(&u);
    let mut energies = vec![e];
    let mut prev_u: Option<Vec<f64>> = None;
    let mut prev_grad: Option<Vec<f64>> = None;
    let mut converged = false;
    let mut iterations = 0;
    let mut trial = vec![0.0; count];

    for it in 0..config.max_iterations {
        iterations = it + 1;
        energy.gradient(&u, &mut grad);
        let gnorm2: f64 = grad.iter().map(|v| v * v).sum();
        if gnorm2 == 0.0 {
            converged = true;
            break;
        }
        let mut step = match config.step_rule {
            StepRule::Fixed { step } => step,
            StepRule::BarzilaiBorwein => match (&prev_u, &prev_grad) {
                (Some(pu), Some(pg)) => {
                    let mut sy = 0.0;
                    let mut ss = 0.0;
                    for i in 0..count {
                        let s = u[i] - pu[i];
                        let y = grad[i] - pg[i];
                        sy += s * y;
                        ss += s * s;
                    }
                    if sy > 0.0 && ss > 0.0 {
                        (ss / sy).clamp(1e-14, 1e14)
                    } else {
                        1.0 / (1.0 + gnorm2.sqrt())
                    }
                }
                _ => 1.0 / (1.0 + gnorm2.sqrt()),
            },
        };
        // Armijo backtracking on the projected direction.
        let mut accepted = false;
        let mut e_new = e;
        for _ in 0..60 {
            for i in 0..count {
                trial[i] = u[i] - step * grad[i];
            }
            e_new = energy.energy(&trial);
            if e_new <= e - 1e-4 * step * gnorm2 {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            converged = true;
            break;
        }
        prev_u = Some(u.clone());
        prev_grad = Some(grad.clone());
        std::mem::swap(&mut u, &mut trial);
        let decrement = e - e_new;
        e = e_new;
        energies.push(e);
        if decrement < config.tolerance {
            converged = true;
            break;
        }
    }

    let map = GridMap::new(domain.clone(), 1, u)?;
    Ok((
        map,
        ConvergenceLog {
            energies,
            iterations,
            converged,
            regularization: eps,
        },
    ))
}

/// One entry of a p-continuation run.
pub struct ContinuationStep {
    pub p: f64,
    pub map: GridMap,
    pub log: ConvergenceLog,
}

/// Sequential warm-started solves over an increasing list of exponents.
pub fn p_continuation(
    domain: &GridDomain,
    boundary: &GridMap,
    p_list: &[f64],
    base: &SolverConfig,
) -> Result<Vec<ContinuationStep>> {
    for w in p_list.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidParameter("p_list must be increasing".into()));
        }
    }
    let mut out = Vec::new();
    let mut warm: Option<GridMap> = None;
    for &p in p_list {
        let cfg = SolverConfig { p, ..base.clone() };
        // Warm start: previous interior, current boundary trace.
        let seed = match &warm {
            Some(prev) => {
                let mut vals = prev.values().to_vec();
                for k in 0..domain.node_count() {
                    if domain.is_boundary(k) {
                        vals[k] = boundary.values()[k];
                    }
                }
                GridMap::new(domain.clone(), 1, vals)?
            }
            None => boundary.clone(),
        };
        let (map, log) = p_harmonic_solve(domain, &seed, &cfg)?;
        warm = Some(map.clone());
        out.push(ContinuationStep { p, map, log });
    }
    Ok(out)
}
