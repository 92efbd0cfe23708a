//! The supremal and p-Dirichlet energies over subdomains, the argmax set of
//! `|Du|`, sublevel neighborhoods, and the one-parameter variation profile
//! `h(t)` with its lower Dini bound.

use crate::error::{Error, Result};
use crate::grid::{restrict, GradientField, SubdomainSpec};
use crate::variations::AffineMap;
use serde::{Deserialize, Serialize};

/// Default relative fattening of the argmax set; the continuum set is
/// typically measure zero and must be widened to be grid-detectable.
pub const DEFAULT_ARGMAX_REL_TOL: f64 = 1e-6;

/// Supremal energy: max over restricted nodes of `|Du|^2`.
pub fn sup_energy(grad: &GradientField, spec: &SubdomainSpec) -> Result<f64> {
    let nodes = restrict(grad.domain(), spec)?;
    let mut m = 0.0f64;
    for &k in &nodes {
        let v = grad.norm_sq_at(k);
        if v > m {
            m = v;
        }
    }
    Ok(m)
}

/// `L^infinity` norm of `|Du|` itself (the square root of [`sup_energy`]),
/// evaluated over an explicit node list in fixed index order.
pub fn sup_norm_over(grad: &GradientField, nodes: &[usize]) -> f64 {
    let mut m = 0.0f64;
    for &k in nodes {
        let v = grad.norm_sq_at(k).sqrt();
        if v > m {
            m = v;
        }
    }
    m
}

/// Trapezoidal p-Dirichlet energy: cells whose corners all lie in the
/// closed subdomain contribute their volume times the corner average of
/// `|Du|^p`.
pub fn integral_energy(grad: &GradientField, spec: &SubdomainSpec, p: f64) -> Result<f64> {
    if !(p.is_finite() && p > 1.0) {
        return Err(Error::InvalidParameter(format!("p = {p} outside (1, inf)")));
    }
    let domain = grad.domain();
    spec.validate(domain)?;
    let n = domain.dim();
    let res = domain.resolution();
    let strides = domain.strides();
    let vol: f64 = domain.spacing().iter().product();
    let corner_count = 1usize << n;
    let mut corner_offsets = Vec::with_capacity(corner_count);
    for mask in 0..corner_count {
        let mut off = 0usize;
        for axis in 0..n {
            if mask & (1 << axis) != 0 {
                off += strides[axis];
            }
        }
        corner_offsets.push(off);
    }
    let mut coord = vec![0.0; n];
    let mut total = 0.0;
    let mut any = false;
    for node in 0..domain.node_count() {
        let m = domain.multi_index(node);
        if (0..n).any(|axis| m[axis] + 1 >= res[axis]) {
            continue;
        }
        let mut inside = true;
        for &off in &corner_offsets {
            domain.node_coord_into(node + off, &mut coord);
            if !spec.contains(&coord) {
                inside = false;
                break;
            }
        }
        if !inside {
            continue;
        }
        any = true;
        let mut avg = 0.0;
        for &off in &corner_offsets {
            avg += grad.norm_sq_at(node + off).powf(0.5 * p);
        }
        total += vol * avg / corner_count as f64;
    }
    if !any {
        return Err(Error::EmptySubdomain(
            "no grid cell lies inside the subdomain".into(),
        ));
    }
    Ok(total)
}

/// Nodes attaining the sup of `|Du|` over a subdomain within a relative
/// tolerance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArgmaxSet {
    pub subdomain: SubdomainSpec,
    /// `||Du||_{L^inf}` over the subdomain (norm, not squared).
    pub sup_value: f64,
    pub nodes: Vec<usize>,
    pub rel_tol: f64,
}

pub fn argmax_set(
    grad: &GradientField,
    spec: &SubdomainSpec,
    rel_tol: f64,
) -> Result<ArgmaxSet> {
    let all = restrict(grad.domain(), spec)?;
    let sup_value = sup_norm_over(grad, &all);
    let cut = (1.0 - rel_tol) * sup_value;
    let nodes: Vec<usize> = all
        .into_iter()
        .filter(|&k| grad.norm_sq_at(k).sqrt() >= cut)
        .collect();
    Ok(ArgmaxSet {
        subdomain: spec.clone(),
        sup_value,
        nodes,
        rel_tol,
    })
}

/// Nodes `y` with `|Du(y)| < |Du(x)|` inside the open ball of radius
/// `eps` around the node `x`. Requires `eps < dist(x, boundary)`.
pub fn sublevel_neighborhood(
    grad: &GradientField,
    node: usize,
    eps: f64,
) -> Result<Vec<usize>> {
    let domain = grad.domain();
    let x = domain.node_coord(node);
    if eps <= 0.0 || eps >= domain.distance_to_boundary(&x) {
        return Err(Error::Subdomain(format!(
            "eps = {eps} reaches the domain boundary from {x:?}"
        )));
    }
    let level = grad.norm_sq_at(node);
    let mut coord = vec![0.0; domain.dim()];
    let mut out = Vec::new();
    for k in 0..domain.node_count() {
        domain.node_coord_into(k, &mut coord);
        let d2: f64 = coord
            .iter()
            .zip(&x)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        if d2 < eps * eps && grad.norm_sq_at(k) < level {
            out.push(k);
        }
    }
    Ok(out)
}

/// The profile `h(t) = ||Du + t DA||^2_{L^inf} - ||Du||^2_{L^inf}` over a
/// t-grid, with the Dini lower bound from the argmax set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VariationProfile {
    pub t_grid: Vec<f64>,
    pub values: Vec<f64>,
    /// `max over argmax nodes of 2 (Du : DA)`.
    pub dini_lower: f64,
    /// Minimum slope increment over the t-grid; nonnegative means convex.
    pub convexity_margin: f64,
}

/// Max over a node list of `|Du + t G|^2`.
fn sup_sq_shifted(grad: &GradientField, nodes: &[usize], g: &[f64], t: f64) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &k in nodes {
        let s = grad.at(k);
        let mut acc = 0.0;
        for (a, b) in s.iter().zip(g) {
            let v = a + t * b;
            acc += v * v;
        }
        if acc > m {
            m = acc;
        }
    }
    m
}

pub fn variation_profile(
    grad: &GradientField,
    affine: &AffineMap,
    spec: &SubdomainSpec,
    t_grid: &[f64],
) -> Result<VariationProfile> {
    if t_grid.is_empty() || t_grid[0] != 0.0 {
        return Err(Error::InvalidParameter("t grid must start at 0".into()));
    }
    for w in t_grid.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidParameter("t grid must be increasing".into()));
        }
    }
    let nodes = restrict(grad.domain(), spec)?;
    let n = grad.domain().dim();
    let nn = grad.target_dim();
    if affine.gradient.nrows() != nn || affine.gradient.ncols() != n {
        return Err(Error::Dimension(
            "affine gradient shape does not match the map".into(),
        ));
    }
    let mut g = vec![0.0; nn * n];
    for alpha in 0..nn {
        for i in 0..n {
            g[alpha * n + i] = affine.gradient[(alpha, i)];
        }
    }
    let base = sup_sq_shifted(grad, &nodes, &g, 0.0);
    let values: Vec<f64> = t_grid
        .iter()
        .map(|&t| sup_sq_shifted(grad, &nodes, &g, t) - base)
        .collect();

    // The Dini bound is taken over exact discrete maximizers: for any tie
    // node y*, h(t) >= |Du(y*) + t DA|^2 - |Du(y*)|^2 >= 2 t Du(y*):DA, so
    // the lower-bound inequality holds up to rounding. A fattened argmax
    // set would overshoot the bound on maps with near-constant |Du|.
    let mut dini_lower = f64::NEG_INFINITY;
    for &k in &nodes {
        let s = grad.at(k);
        // Same arithmetic as sup_sq_shifted at t = 0 so ties are bitwise.
        let mut acc = 0.0;
        for (a, b) in s.iter().zip(&g) {
            let v = a + 0.0 * b;
            acc += v * v;
        }
        if acc == base {
            let dot: f64 = s.iter().zip(&g).map(|(a, b)| a * b).sum();
            dini_lower = dini_lower.max(2.0 * dot);
        }
    }

    let mut convexity_margin = f64::INFINITY;
    for k in 1..t_grid.len().saturating_sub(1) {
        let s0 = (values[k] - values[k - 1]) / (t_grid[k] - t_grid[k - 1]);
        let s1 = (values[k + 1] - values[k]) / (t_grid[k + 1] - t_grid[k]);
        convexity_margin = convexity_margin.min(s1 - s0);
    }
    if !convexity_margin.is_finite() {
        convexity_margin = 0.0;
    }
    Ok(VariationProfile {
        t_grid: t_grid.to_vec(),
        values,
        dini_lower,
        convexity_margin,
    })
}

/// Default geometric t-grid: 0 followed by `2^-20 .. 2^0`.
pub fn default_t_grid() -> Vec<f64> {
    let mut g = vec![0.0];
    for k in (0..=20).rev() {
        g.push(2f64.powi(-k));
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, gradient_field};
    use crate::solutions::AnalyticSolution;
    use crate::variations::AffineMap;
    use nalgebra::DMatrix;

    fn grad_of(sol: &AnalyticSolution, bounds: &[(f64, f64)], res: usize) -> GradientField {
        let d = build_domain(bounds, &vec![res; bounds.len()]).unwrap();
        let u = sol.sample(&d, false).unwrap();
        gradient_field(&u).unwrap()
    }

    #[test]
    fn sup_energy_constant_and_linear() {
        let constant =
            AnalyticSolution::linear(vec![3.0], DMatrix::from_row_slice(1, 2, &[0.0, 0.0]));
        let g = grad_of(&constant, &[(0.0, 1.0), (0.0, 1.0)], 17);
        let spec = SubdomainSpec::bbox(&[0.25, 0.25], &[0.75, 0.75]);
        assert_eq!(sup_energy(&g, &spec).unwrap(), 0.0);

        let linear =
            AnalyticSolution::linear(vec![0.0], DMatrix::from_row_slice(1, 2, &[3.0, 4.0]));
        let g = grad_of(&linear, &[(0.0, 1.0), (0.0, 1.0)], 17);
        assert!((sup_energy(&g, &spec).unwrap() - 25.0).abs() <= 1e-10);
    }

    #[test]
    fn sup_energy_aronsson_closed_form() {
        // max of (16/9)(x^{2/3} + y^{2/3}) over [1,2]^2 is at (2,2):
        // (32/9) 2^{2/3} = 5.644092629220265 (closed-form maximization).
        // Dyadic spacing keeps the corner node exactly at (2,2).
        let sol = AnalyticSolution::aronsson();
        let d = build_domain(&[(0.875, 2.125), (0.875, 2.125)], &[321, 321]).unwrap();
        let u = sol.sample(&d, false).unwrap();
        let g = gradient_field(&u).unwrap();
        let spec = SubdomainSpec::bbox(&[1.0, 1.0], &[2.0, 2.0]);
        let e = sup_energy(&g, &spec).unwrap();
        assert!((e - 5.644092629220265).abs() <= 1e-4, "sup energy {e}");
    }

    #[test]
    fn integral_energy_examples() {
        // Unit-norm linear gradient over the unit square: area x 1 = 1.
        let linear =
            AnalyticSolution::linear(vec![0.0], DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
        let d = build_domain(&[(-0.25, 1.25), (-0.25, 1.25)], &[97, 97]).unwrap();
        let u = linear.sample(&d, false).unwrap();
        let g = gradient_field(&u).unwrap();
        let spec = SubdomainSpec::bbox(&[0.0, 0.0], &[1.0, 1.0]);
        for p in [1.5, 2.0, 4.0] {
            assert!((integral_energy(&g, &spec, p).unwrap() - 1.0).abs() <= 1e-12);
        }
        // Constant map: zero energy.
        let c = AnalyticSolution::linear(vec![1.0], DMatrix::from_row_slice(1, 2, &[0.0, 0.0]));
        let u = c.sample(&d, false).unwrap();
        let g = gradient_field(&u).unwrap();
        assert_eq!(integral_energy(&g, &spec, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn integral_energy_quadratic_1d() {
        // u = x^2 on [0,1], p = 2: integral of 4x^2 is 4/3, to O(h^2).
        let d = build_domain(&[(-0.25, 1.25)], &[193]).unwrap();
        let mut vals = vec![0.0; d.node_count()];
        for k in 0..d.node_count() {
            let x = d.node_coord(k)[0];
            vals[k] = x * x;
        }
        let u = crate::grid::GridMap::new(d.clone(), 1, vals).unwrap();
        let g = gradient_field(&u).unwrap();
        let spec = SubdomainSpec::bbox(&[0.0], &[1.0]);
        let e = integral_energy(&g, &spec, 2.0).unwrap();
        assert!((e - 4.0 / 3.0).abs() <= 1e-4, "E_2 = {e}");
    }

    #[test]
    fn argmax_examples() {
        // Linear map: every subdomain node attains the sup.
        let linear =
            AnalyticSolution::linear(vec![0.0], DMatrix::from_row_slice(1, 2, &[1.0, 2.0]));
        let g = grad_of(&linear, &[(0.0, 1.0), (0.0, 1.0)], 17);
        let spec = SubdomainSpec::bbox(&[0.25, 0.25], &[0.75, 0.75]);
        let a = argmax_set(&g, &spec, DEFAULT_ARGMAX_REL_TOL).unwrap();
        let all = restrict(g.domain(), &spec).unwrap();
        assert_eq!(a.nodes, all);

        // Bowl on a centered ball: argmax nodes sit near the sphere.
        let bowl = AnalyticSolution::quadratic_bowl(2);
        let g = grad_of(&bowl, &[(-1.0, 1.0), (-1.0, 1.0)], 33);
        let ball = SubdomainSpec::Ball {
            center: vec![0.0, 0.0],
            radius: 0.5,
        };
        let a = argmax_set(&g, &ball, 1e-3).unwrap();
        assert!(!a.nodes.is_empty());
        for &k in &a.nodes {
            let x = g.domain().node_coord(k);
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            assert!(r >= 0.5 * (1.0 - 2e-3));
        }

        // Aronsson on [1,2]^2 with a fine grid: the single corner (2,2).
        let sol = AnalyticSolution::aronsson();
        let d = build_domain(&[(0.875, 2.125), (0.875, 2.125)], &[161, 161]).unwrap();
        let u = sol.sample(&d, false).unwrap();
        let g = gradient_field(&u).unwrap();
        let spec = SubdomainSpec::bbox(&[1.0, 1.0], &[2.0, 2.0]);
        let a = argmax_set(&g, &spec, 1e-6).unwrap();
        assert_eq!(a.nodes.len(), 1);
        let x = g.domain().node_coord(a.nodes[0]);
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn argmax_monotone_in_tolerance() {
        let sol = AnalyticSolution::exp_sin();
        let g = grad_of(&sol, &[(0.0, 1.0), (0.0, 1.0)], 33);
        let spec = SubdomainSpec::bbox(&[0.2, 0.2], &[0.8, 0.8]);
        let mut prev = usize::MAX;
        for tol in [1e-1, 1e-2, 1e-4, 1e-8] {
            let a = argmax_set(&g, &spec, tol).unwrap();
            assert!(a.nodes.len() <= prev);
            prev = a.nodes.len();
        }
    }

    #[test]
    fn sup_energy_monotone_in_subdomain() {
        let sol = AnalyticSolution::exp_sin();
        let g = grad_of(&sol, &[(0.0, 1.0), (0.0, 1.0)], 33);
        let inner = SubdomainSpec::bbox(&[0.3, 0.3], &[0.6, 0.6]);
        let outer = SubdomainSpec::bbox(&[0.2, 0.2], &[0.8, 0.8]);
        assert!(sup_energy(&g, &inner).unwrap() <= sup_energy(&g, &outer).unwrap());
    }

    #[test]
    fn sublevel_examples() {
        // Linear map: |Du| constant, no strict sublevel points. Dyadic
        // spacing keeps the discrete gradient bitwise constant.
        let linear =
            AnalyticSolution::linear(vec![0.0], DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
        let g = grad_of(&linear, &[(0.0, 1.0), (0.0, 1.0)], 17);
        let node = g.domain().flat_index(&[8, 8]);
        assert!(sublevel_neighborhood(&g, node, 0.2).unwrap().is_empty());

        // Bowl at (0.5, 0): nodes with |y| < 0.5 inside the eps-ball.
        let bowl = AnalyticSolution::quadratic_bowl(2);
        let g = grad_of(&bowl, &[(-1.0, 1.0), (-1.0, 1.0)], 33);
        let node = g.domain().flat_index(&[24, 16]); // (0.5, 0)
        assert_eq!(g.domain().node_coord(node), vec![0.5, 0.0]);
        let set = sublevel_neighborhood(&g, node, 0.2).unwrap();
        assert!(!set.is_empty());
        let x = g.domain().node_coord(node);
        let level = g.norm_sq_at(node);
        for &k in &set {
            let y = g.domain().node_coord(k);
            let d2: f64 = y.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
            assert!(d2 < 0.04);
            assert!(g.norm_sq_at(k) < level);
        }
        // Lemma 1(b): x attains the sup of |Du| over its sublevel set.
        let m = sup_norm_over(&g, &set);
        assert!(m <= level.sqrt());

        // At the strict minimum of |Du| the set is empty.
        let center = g.domain().flat_index(&[16, 16]);
        assert!(sublevel_neighborhood(&g, center, 0.2).unwrap().is_empty());

        // eps reaching the boundary is rejected.
        assert!(sublevel_neighborhood(&g, node, 0.6).is_err());
    }

    #[test]
    fn profile_linear_closed_form() {
        // u, A linear: h(t) = 2 t (a : g) + t^2 |g|^2 and dini = 2 (a : g).
        let a = [1.0, -2.0];
        let gvec = [0.5, 0.25];
        let linear = AnalyticSolution::linear(vec![0.0], DMatrix::from_row_slice(1, 2, &a));
        let g = grad_of(&linear, &[(0.0, 1.0), (0.0, 1.0)], 17);
        let affine = AffineMap::constant_like(2, 1)
            .with_gradient(DMatrix::from_row_slice(1, 2, &gvec));
        let spec = SubdomainSpec::bbox(&[0.25, 0.25], &[0.75, 0.75]);
        let t_grid = default_t_grid();
        let prof =
            variation_profile(&g, &affine, &spec, &t_grid).unwrap();
        let dot = a[0] * gvec[0] + a[1] * gvec[1];
        let g2 = gvec[0] * gvec[0] + gvec[1] * gvec[1];
        assert_eq!(prof.values[0], 0.0);
        for (t, v) in t_grid.iter().zip(&prof.values) {
            let expect = 2.0 * t * dot + t * t * g2;
            assert!((v - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
        }
        assert!((prof.dini_lower - 2.0 * dot).abs() <= 1e-12);
        assert!(prof.convexity_margin >= -1e-12);
    }

    #[test]
    fn profile_null_variation() {
        let sol = AnalyticSolution::exp_sin();
        let g = grad_of(&sol, &[(0.0, 1.0), (0.0, 1.0)], 17);
        let affine = AffineMap::constant_like(2, 1);
        let spec = SubdomainSpec::bbox(&[0.25, 0.25], &[0.75, 0.75]);
        let prof =
            variation_profile(&g, &affine, &spec, &default_t_grid()).unwrap();
        assert!(prof.values.iter().all(|&v| v == 0.0));
        assert_eq!(prof.dini_lower, 0.0);
    }

    #[test]
    fn profile_rejects_bad_t_grid() {
        let sol = AnalyticSolution::exp_sin();
        let g = grad_of(&sol, &[(0.0, 1.0), (0.0, 1.0)], 9);
        let affine = AffineMap::constant_like(2, 1);
        let spec = SubdomainSpec::bbox(&[0.25, 0.25], &[0.75, 0.75]);
        for bad in [vec![0.1, 0.2], vec![0.0, 0.2, 0.1]] {
            assert!(variation_profile(&g, &affine, &spec, &bad).is_err());
        }
    }
}
