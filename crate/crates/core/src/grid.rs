//! Regular grids, sampled maps and finite-difference derivative fields.
//!
//! Geometry convention: node `k = (k_0, ..., k_{n-1})` sits at
//! `x_i = a_i + k_i * h_i` with `h_i = (b_i - a_i) / (res_i - 1)`. Flat node
//! indices are row-major with axis 0 slowest, so the CSV serialization below
//! is reproducible from the index alone.
//!
//! Derivatives use second-order stencils throughout: central differences at
//! interior nodes and one-sided three/four point stencils at the boundary.
//! Both families reproduce affine and quadratic data exactly (up to
//! rounding), which the test corpus relies on.

use crate::error::{Error, Result};
use crate::tensor::SymTensor;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

pub const MAX_DIM: usize = 3;

/// Default blow-up threshold for flagging hessian nodes as invalid.
pub const DEFAULT_BLOWUP_THRESHOLD: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDomain {
    bounds: Vec<(f64, f64)>,
    resolution: Vec<usize>,
    spacing: Vec<f64>,
}

impl GridDomain {
    /// Builds a domain from per-axis bounds and node counts.
    pub fn new(bounds: &[(f64, f64)], resolution: &[usize]) -> Result<Self> {
        let n = bounds.len();
        if n == 0 || n > MAX_DIM {
            return Err(Error::InvalidDomain(format!(
                "dimension {n} outside supported range 1..={MAX_DIM}"
            )));
        }
        if resolution.len() != n {
            return Err(Error::InvalidDomain(format!(
                "{} resolutions for {} axes",
                resolution.len(),
                n
            )));
        }
        let mut spacing = Vec::with_capacity(n);
        for (axis, (&(a, b), &r)) in bounds.iter().zip(resolution).enumerate() {
            if !a.is_finite() || !b.is_finite() || a >= b {
                return Err(Error::InvalidDomain(format!(
                    "degenerate bounds [{a}, {b}] on axis {axis}"
                )));
            }
            if r < 2 {
                return Err(Error::InvalidDomain(format!(
                    "resolution {r} < 2 on axis {axis}"
                )));
            }
            spacing.push((b - a) / (r - 1) as f64);
        }
        Ok(GridDomain {
            bounds: bounds.to_vec(),
            resolution: resolution.to_vec(),
            spacing,
        })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn node_count(&self) -> usize {
        self.resolution.iter().product()
    }

    /// Stride of each axis in the flat ordering (axis 0 slowest).
    pub fn strides(&self) -> [usize; MAX_DIM] {
        let n = self.dim();
        let mut s = [0usize; MAX_DIM];
        let mut acc = 1usize;
        for axis in (0..n).rev() {
            s[axis] = acc;
            acc *= self.resolution[axis];
        }
        s
    }

    pub fn multi_index(&self, flat: usize) -> [usize; MAX_DIM] {
        let n = self.dim();
        let strides = self.strides();
        let mut out = [0usize; MAX_DIM];
        let mut rem = flat;
        for axis in 0..n {
            out[axis] = rem / strides[axis];
            rem %= strides[axis];
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        let strides = self.strides();
        multi
            .iter()
            .enumerate()
            .map(|(axis, &k)| k * strides[axis])
            .sum()
    }

    /// Node coordinate, reproducible bit-exactly as `a_i + k_i * h_i`.
    pub fn node_coord_into(&self, flat: usize, out: &mut [f64]) {
        let multi = self.multi_index(flat);
        for axis in 0..self.dim() {
            out[axis] = self.bounds[axis].0 + multi[axis] as f64 * self.spacing[axis];
        }
    }

    pub fn node_coord(&self, flat: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.node_coord_into(flat, &mut out);
        out
    }

    /// True if the node lies on the outer boundary along any axis.
    pub fn is_boundary(&self, flat: usize) -> bool {
        let multi = self.multi_index(flat);
        (0..self.dim()).any(|axis| multi[axis] == 0 || multi[axis] == self.resolution[axis] - 1)
    }

    /// Minimum number of cells between the node and the outer boundary.
    pub fn boundary_distance_cells(&self, flat: usize) -> usize {
        let multi = self.multi_index(flat);
        (0..self.dim())
            .map(|axis| multi[axis].min(self.resolution[axis] - 1 - multi[axis]))
            .min()
            .unwrap_or(0)
    }

    /// Distance from a point to the boundary of the (open) box domain.
    pub fn distance_to_boundary(&self, point: &[f64]) -> f64 {
        self.bounds
            .iter()
            .zip(point)
            .map(|(&(a, b), &x)| (x - a).min(b - x))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        self.bounds
            .iter()
            .zip(point)
            .all(|(&(a, b), &x)| x >= a && x <= b)
    }

    /// All interior nodes at least `margin_cells` cells from the boundary.
    pub fn interior_nodes(&self, margin_cells: usize) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&k| self.boundary_distance_cells(k) >= margin_cells)
            .collect()
    }
}

/// A compactly contained subdomain used for restrictions and sup norms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SubdomainSpec {
    Box { center: Vec<f64>, half_widths: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl SubdomainSpec {
    pub fn bbox(lo: &[f64], hi: &[f64]) -> Self {
        let center = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let half_widths = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).collect();
        SubdomainSpec::Box {
            center,
            half_widths,
        }
    }

    pub fn center(&self) -> &[f64] {
        match self {
            SubdomainSpec::Box { center, .. } | SubdomainSpec::Ball { center, .. } => center,
        }
    }

    /// Membership in the closed subdomain.
    pub fn contains(&self, point: &[f64]) -> bool {
        match self {
            SubdomainSpec::Box {
                center,
                half_widths,
            } => center
                .iter()
                .zip(half_widths)
                .zip(point)
                .all(|((&c, &w), &x)| (x - c).abs() <= w),
            SubdomainSpec::Ball { center, radius } => {
                let d2: f64 = center
                    .iter()
                    .zip(point)
                    .map(|(&c, &x)| (x - c) * (x - c))
                    .sum();
                d2 <= radius * radius
            }
        }
    }

    /// Distance from the subdomain closure to the outer domain boundary.
    /// Positive iff the closure sits in the open interior.
    pub fn margin(&self, domain: &GridDomain) -> f64 {
        let per_axis = |c: &[f64], ext: &dyn Fn(usize) -> f64| -> f64 {
            domain
                .bounds()
                .iter()
                .enumerate()
                .map(|(axis, &(a, b))| {
                    let w = ext(axis);
                    (c[axis] - w - a).min(b - (c[axis] + w))
                })
                .fold(f64::INFINITY, f64::min)
        };
        match self {
            SubdomainSpec::Box {
                center,
                half_widths,
            } => per_axis(center, &|axis| half_widths[axis]),
            SubdomainSpec::Ball { center, radius } => per_axis(center, &|_| *radius),
        }
    }

    pub fn validate(&self, domain: &GridDomain) -> Result<()> {
        let c = self.center();
        if c.len() != domain.dim() {
            return Err(Error::Subdomain(format!(
                "subdomain dimension {} does not match domain dimension {}",
                c.len(),
                domain.dim()
            )));
        }
        match self {
            SubdomainSpec::Box { half_widths, .. } => {
                if half_widths.len() != domain.dim()
                    || half_widths.iter().any(|&w| !w.is_finite() || w < 0.0)
                {
                    return Err(Error::Subdomain("invalid box half-widths".into()));
                }
            }
            SubdomainSpec::Ball { radius, .. } => {
                if !radius.is_finite() || *radius < 0.0 {
                    return Err(Error::Subdomain("invalid ball radius".into()));
                }
            }
        }
        if self.margin(domain) <= 0.0 {
            return Err(Error::Subdomain(
                "subdomain closure is not compactly contained in the domain interior".into(),
            ));
        }
        Ok(())
    }
}

/// Indices of all grid nodes inside the closed subdomain, ascending.
pub fn restrict(domain: &GridDomain, spec: &SubdomainSpec) -> Result<Vec<usize>> {
    spec.validate(domain)?;
    let mut coord = vec![0.0; domain.dim()];
    let mut out = Vec::new();
    for k in 0..domain.node_count() {
        domain.node_coord_into(k, &mut coord);
        if spec.contains(&coord) {
            out.push(k);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptySubdomain(format!("{spec:?}")));
    }
    Ok(out)
}

/// A sampled map `u: domain -> R^N`, values stored node-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GridMap {
    domain: GridDomain,
    target_dim: usize,
    values: Vec<f64>,
}

impl GridMap {
    pub fn new(domain: GridDomain, target_dim: usize, values: Vec<f64>) -> Result<Self> {
        if target_dim == 0 || target_dim > MAX_DIM {
            return Err(Error::Dimension(format!(
                "target dimension {target_dim} outside 1..={MAX_DIM}"
            )));
        }
        if values.len() != domain.node_count() * target_dim {
            return Err(Error::Dimension(format!(
                "value array length {} != node count {} x target dim {}",
                values.len(),
                domain.node_count(),
                target_dim
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Dimension("non-finite map values".into()));
        }
        Ok(GridMap {
            domain,
            target_dim,
            values,
        })
    }

    pub fn domain(&self) -> &GridDomain {
        &self.domain
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value_at(&self, node: usize) -> &[f64] {
        &self.values[node * self.target_dim..(node + 1) * self.target_dim]
    }

    /// Writes the map as a one-line JSON header followed by a CSV body,
    /// one node per line, coordinates then values, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::json!({
            "bounds": self.domain.bounds(),
            "resolution": self.domain.resolution(),
            "target_dim": self.target_dim,
        });
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        let n = self.domain.dim();
        let mut cols: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
        cols.extend((0..self.target_dim).map(|a| format!("u{a}")));
        writeln!(w, "{}", cols.join(","))?;
        let mut coord = vec![0.0; n];
        for k in 0..self.domain.node_count() {
            self.domain.node_coord_into(k, &mut coord);
            let mut fields: Vec<String> = coord.iter().map(|v| fmt_g17(*v)).collect();
            fields.extend(self.value_at(k).iter().map(|v| fmt_g17(*v)));
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }

    pub fn write_csv_file<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv<R: BufRead>(mut r: R) -> Result<Self> {
        let mut header = String::new();
        r.read_line(&mut header)?;
        #[derive(Deserialize)]
        struct Header {
            bounds: Vec<(f64, f64)>,
            resolution: Vec<usize>,
            target_dim: usize,
        }
        let h: Header = serde_json::from_str(header.trim())
            .map_err(|e| Error::Format(format!("bad JSON header: {e}")))?;
        let domain = GridDomain::new(&h.bounds, &h.resolution)?;
        let mut lines = r.lines();
        let _cols = lines
            .next()
            .ok_or_else(|| Error::Format("missing column header".into()))??;
        let n = domain.dim();
        let mut values = Vec::with_capacity(domain.node_count() * h.target_dim);
        let mut coord = vec![0.0; n];
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != n + h.target_dim {
                return Err(Error::Format(format!(
                    "row {k}: expected {} fields, got {}",
                    n + h.target_dim,
                    fields.len()
                )));
            }
            if k >= domain.node_count() {
                return Err(Error::Format("more rows than grid nodes".into()));
            }
            domain.node_coord_into(k, &mut coord);
            for (axis, f) in fields[..n].iter().enumerate() {
                let x: f64 = f
                    .parse()
                    .map_err(|_| Error::Format(format!("row {k}: bad coordinate `{f}`")))?;
                if x != coord[axis] {
                    return Err(Error::Format(format!(
                        "row {k}: coordinate {x} does not match grid node {}",
                        coord[axis]
                    )));
                }
            }
            for f in &fields[n..] {
                let v: f64 = f
                    .parse()
                    .map_err(|_| Error::Format(format!("row {k}: bad value `{f}`")))?;
                values.push(v);
            }
        }
        GridMap::new(domain, h.target_dim, values)
    }

    pub fn read_csv_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        GridMap::read_csv(std::io::BufReader::new(f))
    }
}

/// Formats with 17 significant digits; `f64` round-trips exactly.
pub fn fmt_g17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Convenience alias for [`GridDomain::new`].
pub fn build_domain(bounds: &[(f64, f64)], resolution: &[usize]) -> Result<GridDomain> {
    GridDomain::new(bounds, resolution)
}

/// A multi-component field sampled on every grid node.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub domain: GridDomain,
    pub comps: usize,
    pub data: Vec<f64>,
}

impl GridField {
    pub fn zeros(domain: GridDomain, comps: usize) -> Self {
        let len = domain.node_count() * comps;
        GridField {
            domain,
            comps,
            data: vec![0.0; len],
        }
    }

    pub fn at(&self, node: usize) -> &[f64] {
        &self.data[node * self.comps..(node + 1) * self.comps]
    }

    pub fn from_map(map: &GridMap) -> Self {
        GridField {
            domain: map.domain().clone(),
            comps: map.target_dim(),
            data: map.values().to_vec(),
        }
    }
}

fn require_axis_nodes(domain: &GridDomain, needed: usize) -> Result<()> {
    for (axis, &r) in domain.resolution().iter().enumerate() {
        if r < needed {
            return Err(Error::Stencil {
                axis,
                needed,
                got: r,
            });
        }
    }
    Ok(())
}

/// Second-order first derivative of every component along `axis`.
/// Central stencil at interior nodes, one-sided three-point at the boundary.
fn derivative_along(domain: &GridDomain, comps: usize, data: &[f64], axis: usize) -> Vec<f64> {
    let h = domain.spacing()[axis];
    let res = domain.resolution()[axis];
    let stride = domain.strides()[axis] * comps;
    let count = domain.node_count();
    let mut out = vec![0.0; count * comps];
    for node in 0..count {
        let k = domain.multi_index(node)[axis];
        let base = node * comps;
        for c in 0..comps {
            let idx = base + c;
            out[idx] = if k > 0 && k + 1 < res {
                (data[idx + stride] - data[idx - stride]) / (2.0 * h)
            } else if k == 0 {
                (-3.0 * data[idx] + 4.0 * data[idx + stride] - data[idx + 2 * stride]) / (2.0 * h)
            } else {
                (3.0 * data[idx] - 4.0 * data[idx - stride] + data[idx - 2 * stride]) / (2.0 * h)
            };
        }
    }
    out
}

/// Second-order pure second derivative of every component along `axis`.
/// Compact central stencil inside; four-point one-sided at the boundary
/// (three-point when the axis has only three nodes).
fn second_derivative_along(
    domain: &GridDomain,
    comps: usize,
    data: &[f64],
    axis: usize,
) -> Vec<f64> {
    let h = domain.spacing()[axis];
    let h2 = h * h;
    let res = domain.resolution()[axis];
    let stride = domain.strides()[axis] * comps;
    let count = domain.node_count();
    let mut out = vec![0.0; count * comps];
    for node in 0..count {
        let k = domain.multi_index(node)[axis];
        let base = node * comps;
        for c in 0..comps {
            let idx = base + c;
            out[idx] = if k > 0 && k + 1 < res {
                (data[idx + stride] - 2.0 * data[idx] + data[idx - stride]) / h2
            } else if k == 0 {
                if res >= 4 {
                    (2.0 * data[idx] - 5.0 * data[idx + stride] + 4.0 * data[idx + 2 * stride]
                        - data[idx + 3 * stride])
                        / h2
                } else {
                    (data[idx] - 2.0 * data[idx + stride] + data[idx + 2 * stride]) / h2
                }
            } else if res >= 4 {
                (2.0 * data[idx] - 5.0 * data[idx - stride] + 4.0 * data[idx - 2 * stride]
                    - data[idx - 3 * stride])
                    / h2
            } else {
                (data[idx] - 2.0 * data[idx - stride] + data[idx - 2 * stride]) / h2
            };
        }
    }
    out
}

/// Gradient field of a sampled map: `N x n` entries per node, stored
/// `[alpha][i]`.
#[derive(Clone, Debug)]
pub struct GradientField {
    domain: GridDomain,
    target_dim: usize,
    data: Vec<f64>,
}

impl GradientField {
    pub fn domain(&self) -> &GridDomain {
        &self.domain
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn at(&self, node: usize) -> &[f64] {
        let w = self.target_dim * self.domain.dim();
        &self.data[node * w..(node + 1) * w]
    }

    pub fn matrix_at(&self, node: usize) -> DMatrix<f64> {
        let n = self.domain.dim();
        let s = self.at(node);
        DMatrix::from_fn(self.target_dim, n, |alpha, i| s[alpha * n + i])
    }

    /// Squared Frobenius norm `|Du|^2` at a node.
    #[inline]
    pub fn norm_sq_at(&self, node: usize) -> f64 {
        self.at(node).iter().map(|v| v * v).sum()
    }

    pub fn as_field(&self) -> GridField {
        GridField {
            domain: self.domain.clone(),
            comps: self.target_dim * self.domain.dim(),
            data: self.data.clone(),
        }
    }
}

/// Central/one-sided gradient of the sampled map. Needs >= 3 nodes per axis.
pub fn gradient_field(u: &GridMap) -> Result<GradientField> {
    let domain = u.domain();
    require_axis_nodes(domain, 3)?;
    let n = domain.dim();
    let nn = u.target_dim();
    let count = domain.node_count();
    let mut data = vec![0.0; count * nn * n];
    for axis in 0..n {
        let d = derivative_along(domain, nn, u.values(), axis);
        for node in 0..count {
            for alpha in 0..nn {
                data[node * nn * n + alpha * n + axis] = d[node * nn + alpha];
            }
        }
    }
    Ok(GradientField {
        domain: domain.clone(),
        target_dim: nn,
        data,
    })
}

/// Hessian field with per-node validity flags.
#[derive(Clone, Debug)]
pub struct HessianField {
    domain: GridDomain,
    target_dim: usize,
    data: Vec<f64>,
    valid: Vec<bool>,
}

impl HessianField {
    pub fn domain(&self) -> &GridDomain {
        &self.domain
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn is_valid(&self, node: usize) -> bool {
        self.valid[node]
    }

    pub fn valid_flags(&self) -> &[bool] {
        &self.valid
    }

    pub fn tensor_at(&self, node: usize) -> SymTensor {
        let n = self.domain.dim();
        let w = self.target_dim * n * n;
        SymTensor::from_raw(
            self.target_dim,
            n,
            self.data[node * w..(node + 1) * w].to_vec(),
        )
    }
}

/// Second-derivative field of the sampled map: compact central second
/// differences on the diagonal, symmetrized crossed first-derivative
/// stencils for the mixed entries. Nodes where any component exceeds
/// `blowup_threshold` in magnitude are flagged invalid.
pub fn hessian_field(u: &GridMap, blowup_threshold: f64) -> Result<HessianField> {
    let domain = u.domain();
    require_axis_nodes(domain, 3)?;
    let n = domain.dim();
    let nn = u.target_dim();
    let count = domain.node_count();
    let grad = gradient_field(u)?;

    // d_of_grad[i][node * nn*n + alpha*n + j] = D_i (D_j u_alpha)
    let mut d_of_grad: Vec<Vec<f64>> = Vec::with_capacity(n);
    for axis in 0..n {
        d_of_grad.push(derivative_along(domain, nn * n, &grad.data, axis));
    }

    let w = nn * n * n;
    let mut data = vec![0.0; count * w];
    let mut valid = vec![true; count];
    for axis in 0..n {
        let pure = second_derivative_along(domain, nn, u.values(), axis);
        for node in 0..count {
            for alpha in 0..nn {
                data[node * w + alpha * n * n + axis * n + axis] = pure[node * nn + alpha];
            }
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            for node in 0..count {
                for alpha in 0..nn {
                    let a = d_of_grad[i][node * nn * n + alpha * n + j];
                    let b = d_of_grad[j][node * nn * n + alpha * n + i];
                    let v = 0.5 * (a + b);
                    data[node * w + alpha * n * n + i * n + j] = v;
                    data[node * w + alpha * n * n + j * n + i] = v;
                }
            }
        }
    }
    for node in 0..count {
        let s = &data[node * w..(node + 1) * w];
        if s.iter().any(|v| !v.is_finite() || v.abs() > blowup_threshold) {
            valid[node] = false;
        }
    }
    Ok(HessianField {
        domain: domain.clone(),
        target_dim: nn,
        data,
        valid,
    })
}

/// Pointwise first/second derivative data at one node.
#[derive(Clone, Debug)]
pub struct Jet {
    pub point: Vec<f64>,
    pub gradient: DMatrix<f64>,
    pub hessian: SymTensor,
    pub hessian_valid: bool,
}

pub fn jet_at(grad: &GradientField, hess: &HessianField, node: usize) -> Jet {
    Jet {
        point: grad.domain().node_coord(node),
        gradient: grad.matrix_at(node),
        hessian: hess.tensor_at(node),
        hessian_valid: hess.is_valid(node),
    }
}

/// Resolves a physical step to a whole number of cells along `axis`.
pub fn step_cells(domain: &GridDomain, axis: usize, step: f64) -> Result<i64> {
    let h = domain.spacing()[axis];
    let s = (step / h).round();
    if s == 0.0 || !s.is_finite() || (step - s * h).abs() > 1e-9 * h {
        return Err(Error::IncommensurateStep {
            axis,
            step,
            spacing: h,
        });
    }
    Ok(s as i64)
}

/// Difference quotient `(F(x + h e_axis) - F(x)) / h` with the field
/// extended by zero outside the domain. `h` must be a nonzero whole
/// number of cells along `axis`.
pub fn difference_quotient(field: &GridField, axis: usize, step: f64) -> Result<GridField> {
    let domain = &field.domain;
    if axis >= domain.dim() {
        return Err(Error::Dimension(format!(
            "axis {axis} out of range for dimension {}",
            domain.dim()
        )));
    }
    let cells = step_cells(domain, axis, step)?;
    let h = cells as f64 * domain.spacing()[axis];
    let res = domain.resolution()[axis] as i64;
    let stride = domain.strides()[axis];
    let comps = field.comps;
    let mut out = GridField::zeros(domain.clone(), comps);
    for node in 0..domain.node_count() {
        let k = domain.multi_index(node)[axis] as i64;
        let shifted = k + cells;
        let here = &field.data[node * comps..(node + 1) * comps];
        let dst = &mut out.data[node * comps..(node + 1) * comps];
        if shifted >= 0 && shifted < res {
            let other = (node as i64 + cells * stride as i64) as usize;
            let there = &field.data[other * comps..(other + 1) * comps];
            for c in 0..comps {
                dst[c] = (there[c] - here[c]) / h;
            }
        } else {
            // Zero extension outside the domain.
            for c in 0..comps {
                dst[c] = (0.0 - here[c]) / h;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_fn(
        domain: &GridDomain,
        target_dim: usize,
        f: impl Fn(&[f64], &mut [f64]),
    ) -> GridMap {
        let mut values = vec![0.0; domain.node_count() * target_dim];
        let mut coord = vec![0.0; domain.dim()];
        for k in 0..domain.node_count() {
            domain.node_coord_into(k, &mut coord);
            f(&coord, &mut values[k * target_dim..(k + 1) * target_dim]);
        }
        GridMap::new(domain.clone(), target_dim, values).unwrap()
    }

    #[test]
    fn build_domain_smallest_grid() {
        let d = build_domain(&[(0.0, 1.0), (0.0, 1.0)], &[2, 2]).unwrap();
        assert_eq!(d.spacing(), &[1.0, 1.0]);
        assert_eq!(d.node_count(), 4);
    }

    #[test]
    fn build_domain_spacing_arithmetic() {
        let d = build_domain(&[(-1.0, 1.0), (-1.0, 1.0)], &[201, 201]).unwrap();
        assert!((d.spacing()[0] - 0.01).abs() < 1e-15);
        assert!((d.spacing()[1] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn build_domain_rejects_single_node() {
        assert!(matches!(
            build_domain(&[(0.0, 1.0)], &[1]),
            Err(Error::InvalidDomain(_))
        ));
        assert!(matches!(
            build_domain(&[(1.0, 1.0)], &[4]),
            Err(Error::InvalidDomain(_))
        ));
    }

    #[test]
    fn node_coords_roundtrip() {
        let d = build_domain(&[(0.0, 1.0), (2.0, 3.0), (-1.0, 0.0)], &[3, 4, 5]).unwrap();
        for k in 0..d.node_count() {
            let m = d.multi_index(k);
            assert_eq!(d.flat_index(&m[..3]), k);
        }
        let c = d.node_coord(d.node_count() - 1);
        assert_eq!(c, vec![1.0, 3.0, 0.0]);
    }

    #[test]
    fn gradient_exact_on_linear() {
        let d = build_domain(&[(0.0, 1.0), (0.0, 1.0)], &[11, 11]).unwrap();
        let u = sample_fn(&d, 1, |x, out| out[0] = x[0]);
        let g = gradient_field(&u).unwrap();
        for k in 0..d.node_count() {
            let m = g.matrix_at(k);
            assert!((m[(0, 0)] - 1.0).abs() <= 1e-14);
            assert!(m[(0, 1)].abs() <= 1e-14);
        }
    }

    #[test]
    fn gradient_exact_on_quadratic() {
        let d = build_domain(&[(0.0, 1.0), (0.0, 1.0)], &[101, 101]).unwrap();
        let u = sample_fn(&d, 1, |x, out| out[0] = x[0] * x[0] + x[1] * x[1]);
        let g = gradient_field(&u).unwrap();
        let node = d.flat_index(&[50, 50]);
        let m = g.matrix_at(node);
        assert!((m[(0, 0)] - 1.0).abs() <= 1e-10);
        assert!((m[(0, 1)] - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn gradient_needs_three_nodes() {
        let d = build_domain(&[(0.0, 1.0)], &[2]).unwrap();
        let u = sample_fn(&d, 1, |x, out| out[0] = x[0]);
        assert!(matches!(gradient_field(&u), Err(Error::Stencil { .. })));
    }

    #[test]
    fn hessian_exact_on_quadratic_and_affine() {
        let d = build_domain(&[(0.0, 1.0), (0.0, 1.0)], &[41, 41]).unwrap();
        let q = sample_fn(&d, 1, |x, out| out[0] = x[0] * x[0] + x[1] * x[1]);
        let h = hessian_field(&q, DEFAULT_BLOWUP_THRESHOLD).unwrap();
        for k in 0..d.node_count() {
            let t = h.tensor_at(k);
            assert!((t.get(0, 0, 0) - 2.0).abs() <= 1e-10);
            assert!((t.get(0, 1, 1) - 2.0).abs() <= 1e-10);
            assert!(t.get(0, 0, 1).abs() <= 1e-10);
        }
        // Affine annihilation at the stated 1e-13 needs h not too small:
        // the stencil divides value rounding by h^2.
        let d = build_domain(&[(0.0, 1.0), (0.0, 1.0)], &[5, 5]).unwrap();
        let a = sample_fn(&d, 1, |x, out| out[0] = 0.6 * x[0] - 0.4 * x[1] + 0.1);
        let h = hessian_field(&a, DEFAULT_BLOWUP_THRESHOLD).unwrap();
        for k in 0..d.node_count() {
            assert!(h.tensor_at(k).max_abs() <= 1e-13);
        }
    }

    #[test]
    fn hessian_blowup_flagging() {
        // |x|^{4/3} has curvature ~ h^{-2/3} at the axis; with a threshold
        // below that scale the axis nodes are flagged, with the default 1e6
        // nothing is (the analytic crossing lies below grid resolution).
        let d = build_domain(&[(-1.0, 1.0), (0.5, 1.5)], &[201, 11]).unwrap();
        let u = sample_fn(&d, 1, |x, out| {
            out[0] = x[0].abs().powf(4.0 / 3.0) - x[1].abs().powf(4.0 / 3.0)
        });
        let h = hessian_field(&u, DEFAULT_BLOWUP_THRESHOLD).unwrap();
        assert!((0..d.node_count()).all(|k| h.is_valid(k)));
        let h = hessian_field(&u, 30.0).unwrap();
        let axis_node = d.flat_index(&[100, 5]);
        assert_eq!(d.node_coord(axis_node)[0], 0.0);
        assert!(!h.is_valid(axis_node));
        let far_node = d.flat_index(&[180, 5]);
        assert!(h.is_valid(far_node));
    }

    #[test]
    fn difference_quotient_examples() {
        // v(x) = x on [0,1], h = 0.1.
        let d = build_domain(&[(0.0, 1.0)], &[21]).unwrap();
        let u = sample_fn(&d, 1, |x, out| out[0] = x[0]);
        let f = GridField::from_map(&u);
        let dq = difference_quotient(&f, 0, 0.1).unwrap();
        let mid = d.flat_index(&[10]);
        assert!((dq.at(mid)[0] - 1.0).abs() <= 1e-12);
        // Shift exits the domain at x = 0.95: zero extension gives -9.5.
        let near_end = d.flat_index(&[19]);
        let x = d.node_coord(near_end)[0];
        assert!((dq.at(near_end)[0] - (0.0 - x) / 0.1).abs() <= 1e-12);
        assert!((dq.at(near_end)[0] + 9.5).abs() <= 1e-12);
        // Constant field: quotient vanishes at interior nodes.
        let c = sample_fn(&d, 1, |_, out| out[0] = 7.5);
        let dq = difference_quotient(&GridField::from_map(&c), 0, 0.1).unwrap();
        assert_eq!(dq.at(mid)[0], 0.0);
    }

    #[test]
    fn difference_quotient_rejects_incommensurate_step() {
        let d = build_domain(&[(0.0, 1.0)], &[21]).unwrap();
        let u = sample_fn(&d, 1, |x, out| out[0] = x[0]);
        let f = GridField::from_map(&u);
        assert!(matches!(
            difference_quotient(&f, 0, 0.07),
            Err(Error::IncommensurateStep { .. })
        ));
        assert!(matches!(
            difference_quotient(&f, 0, 0.0),
            Err(Error::IncommensurateStep { .. })
        ));
    }

    #[test]
    fn restrict_counts_nodes() {
        let d = build_domain(&[(0.0, 1.0), (0.0, 1.0)], &[5, 5]).unwrap();
        let spec = SubdomainSpec::bbox(&[0.25, 0.25], &[0.75, 0.75]);
        let nodes = restrict(&d, &spec).unwrap();
        assert_eq!(nodes.len(), 9);
    }

    #[test]
    fn restrict_degenerate_ball_is_single_node() {
        let d = build_domain(&[(0.0, 1.0), (0.0, 1.0)], &[5, 5]).unwrap();
        let spec = SubdomainSpec::Ball {
            center: vec![0.5, 0.5],
            radius: 0.0,
        };
        let nodes = restrict(&d, &spec).unwrap();
        assert_eq!(nodes, vec![d.flat_index(&[2, 2])]);
    }

    #[test]
    fn restrict_rejects_uncontained_box() {
        let d = build_domain(&[(0.0, 1.0), (0.0, 1.0)], &[5, 5]).unwrap();
        let spec = SubdomainSpec::bbox(&[0.5, 0.5], &[1.5, 0.9]);
        assert!(matches!(restrict(&d, &spec), Err(Error::Subdomain(_))));
        // Touching the boundary is not compact containment either.
        let spec = SubdomainSpec::bbox(&[0.0, 0.0], &[1.0, 1.0]);
        assert!(matches!(restrict(&d, &spec), Err(Error::Subdomain(_))));
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let d = build_domain(&[(0.0, 1.0), (-1.0, 2.0)], &[4, 3]).unwrap();
        let u = sample_fn(&d, 2, |x, out| {
            out[0] = x[0] * x[1] + 1.0 / 3.0;
            out[1] = (x[0] - 0.7).exp();
        });
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let back = GridMap::read_csv(std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(u, back);
    }

    #[test]
    fn jet_symmetry_is_exact() {
        let d = build_domain(&[(0.0, 1.0), (0.0, 1.0)], &[17, 17]).unwrap();
        let u = sample_fn(&d, 1, |x, out| out[0] = (x[0] * 2.1).sin() * (x[1] * 1.3).cos());
        let g = gradient_field(&u).unwrap();
        let h = hessian_field(&u, DEFAULT_BLOWUP_THRESHOLD).unwrap();
        for k in [0, 5, 30, d.node_count() - 1] {
            let j = jet_at(&g, &h, k);
            assert_eq!(
                j.hessian.get(0, 0, 1).to_bits(),
                j.hessian.get(0, 1, 0).to_bits()
            );
        }
    }
}
