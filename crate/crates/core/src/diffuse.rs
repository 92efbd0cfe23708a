//! Empirical measures of second-derivative behaviour built from difference
//! quotients of the gradient: per-node sample sets over a step schedule,
//! support estimation with an atom at infinity, and the pointwise solution
//! criterion in sup and integral form.

use crate::error::{Error, Result};
use crate::grid::{GradientField, Jet};
use crate::operators::OperatorId;
use crate::tensor::SymTensor;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Default step schedule in grid cells: geometric halving from 8 cells
/// down to a single cell keeps every step commensurate with the grid.
pub const DEFAULT_STEPS_CELLS: [i64; 4] = [8, 4, 2, 1];

pub const DEFAULT_TAIL_FRACTION: f64 = 0.5;

/// Default cluster radius as a multiple of the grid spacing.
pub const DEFAULT_CLUSTER_EPS_FACTOR: f64 = 10.0;

/// Default exceptional-node budget of the field check.
pub const DEFAULT_KAPPA: f64 = 0.01;

/// Difference-quotient hessian samples at one node over a step schedule.
#[derive(Clone, Debug)]
pub struct HessianSampleSet {
    pub node: usize,
    pub point: Vec<f64>,
    /// Physical steps, strictly decreasing.
    pub steps: Vec<f64>,
    /// Symmetrized sample tensors, one per step.
    pub samples: Vec<SymTensor>,
    /// Per-step blow-up flags: `|sample| > blowup`.
    pub at_infinity: Vec<bool>,
    /// Asymmetry norm of each raw sample before symmetrization.
    pub asymmetry: Vec<f64>,
}

/// Samples `D^{1,h} Du` at a node for each step of the schedule, with the
/// gradient field extended by zero outside the domain. Steps are whole
/// numbers of cells; the grid must be isotropic so one physical step works
/// on every axis.
pub fn hessian_samples_from_gradient(
    grad: &GradientField,
    node: usize,
    steps_cells: &[i64],
    blowup: f64,
) -> Result<HessianSampleSet> {
    let domain = grad.domain();
    let n = domain.dim();
    let nn = grad.target_dim();
    let h0 = domain.spacing()[0];
    for (axis, &h) in domain.spacing().iter().enumerate() {
        if (h - h0).abs() > 1e-12 * h0 {
            return Err(Error::IncommensurateStep {
                axis,
                step: h0,
                spacing: h,
            });
        }
    }
    if steps_cells.is_empty() || steps_cells.iter().any(|&s| s <= 0) {
        return Err(Error::InvalidParameter(
            "step schedule must be positive".into(),
        ));
    }
    for w in steps_cells.windows(2) {
        if w[1] >= w[0] {
            return Err(Error::InvalidParameter(
                "step schedule must be strictly decreasing".into(),
            ));
        }
    }
    let res = domain.resolution();
    let strides = domain.strides();
    let multi = domain.multi_index(node);
    let here = grad.at(node);
    let zeros = vec![0.0; nn * n];

    let mut steps = Vec::with_capacity(steps_cells.len());
    let mut samples = Vec::with_capacity(steps_cells.len());
    let mut at_infinity = Vec::with_capacity(steps_cells.len());
    let mut asymmetry = Vec::with_capacity(steps_cells.len());
    for &cells in steps_cells {
        let h = cells as f64 * h0;
        let mut raw = SymTensor::zeros(nn, n);
        for axis in 0..n {
            let k = multi[axis] as i64 + cells;
            let there: &[f64] = if k >= 0 && (k as usize) < res[axis] {
                grad.at(node + cells as usize * strides[axis])
            } else {
                &zeros
            };
            for alpha in 0..nn {
                for j in 0..n {
                    let q = (there[alpha * n + j] - here[alpha * n + j]) / h;
                    raw.set(alpha, axis, j, q);
                }
            }
        }
        asymmetry.push(raw.asymmetry_norm());
        raw.symmetrize();
        at_infinity.push(!raw.is_finite() || raw.norm() > blowup);
        samples.push(raw);
        steps.push(h);
    }
    Ok(HessianSampleSet {
        node,
        point: domain.node_coord(node),
        steps,
        samples,
        at_infinity,
        asymmetry,
    })
}

/// Finite surrogate for the reduced support of a hessian measure:
/// clustered atoms with weights plus the mass at infinity.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HessianSupport {
    pub atoms: Vec<(SymTensor, f64)>,
    pub infinity_weight: f64,
    pub cluster_eps: f64,
}

/// Greedy epsilon-ball clustering of the smallest-step samples. The tail
/// fraction selects how many of the finest steps enter; flagged samples
/// feed the infinity weight. Atom centroids closer than `cluster_eps` are
/// merged until pairwise separated.
pub fn support_estimate(
    set: &HessianSampleSet,
    cluster_eps: f64,
    tail_fraction: f64,
) -> Result<HessianSupport> {
    if set.steps.len() < 3 {
        return Err(Error::InvalidParameter(
            "support estimation needs at least 3 steps".into(),
        ));
    }
    if !(0.0 < tail_fraction && tail_fraction <= 1.0) {
        return Err(Error::InvalidParameter(
            "tail fraction must lie in (0, 1]".into(),
        ));
    }
    let len = set.steps.len();
    let tail_count = ((tail_fraction * len as f64).ceil() as usize).clamp(1, len);
    let tail_start = len - tail_count;

    let mut flagged = 0usize;
    // (seed sample, member indices)
    let mut clusters: Vec<(usize, Vec<usize>)> = Vec::new();
    for idx in tail_start..len {
        if set.at_infinity[idx] {
            flagged += 1;
            continue;
        }
        let sample = &set.samples[idx];
        let mut placed = false;
        for (seed, members) in clusters.iter_mut() {
            if sample.distance(&set.samples[*seed]) <= cluster_eps {
                members.push(idx);
                placed = true;
                break;
            }
        }
        if !placed {
            clusters.push((idx, vec![idx]));
        }
    }

    let centroid = |members: &[usize]| -> SymTensor {
        let mut c = SymTensor::zeros(
            set.samples[0].target_dim(),
            set.samples[0].dim(),
        );
        for &m in members {
            c.add_scaled(1.0, &set.samples[m]);
        }
        c.scale(1.0 / members.len() as f64);
        c
    };
    let mut groups: Vec<Vec<usize>> = clusters.into_iter().map(|(_, m)| m).collect();
    // Merge centroids that ended up within cluster_eps of each other.
    loop {
        let cents: Vec<SymTensor> = groups.iter().map(|m| centroid(m)).collect();
        let mut merge = None;
        'outer: for i in 0..cents.len() {
            for j in (i + 1)..cents.len() {
                if cents[i].distance(&cents[j]) <= cluster_eps {
                    merge = Some((i, j));
                    break 'outer;
                }
            }
        }
        match merge {
            Some((i, j)) => {
                let other = groups.remove(j);
                groups[i].extend(other);
            }
            None => break,
        }
    }

    let atoms: Vec<(SymTensor, f64)> = groups
        .iter()
        .map(|m| (centroid(m), m.len() as f64 / tail_count as f64))
        .collect();
    Ok(HessianSupport {
        atoms,
        infinity_weight: flagged as f64 / tail_count as f64,
        cluster_eps,
    })
}

fn jet_with(du: &DMatrix<f64>, hess: &SymTensor) -> Jet {
    Jet {
        point: vec![0.0; du.ncols()],
        gradient: du.clone(),
        hessian: hess.clone(),
        hessian_valid: true,
    }
}

/// Sup-form criterion at one point: the largest operator norm over the
/// support atoms. An empty atom list (all mass at infinity) is trivially
/// satisfied and yields 0.
pub fn d_solution_residual(
    du: &DMatrix<f64>,
    op: &OperatorId,
    support: &HessianSupport,
    rank_tol: f64,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for (atom, _) in &support.atoms {
        let jet = jet_with(du, atom);
        worst = worst.max(op.apply(&jet, rank_tol)?.norm());
    }
    Ok(worst)
}

/// Compactly supported bump on tensor space, equal to 1 at its center.
#[derive(Clone, Debug)]
pub struct TensorBump {
    pub center: SymTensor,
    pub radius: f64,
}

impl TensorBump {
    pub fn eval(&self, x: &SymTensor) -> f64 {
        let r2 = {
            let d = x.distance(&self.center) / self.radius;
            d * d
        };
        if r2 >= 1.0 {
            0.0
        } else {
            (1.0 - 1.0 / (1.0 - r2)).exp()
        }
    }
}

/// Integral-form criterion: empirical-measure integral of
/// `Phi(X) op(Du, X)` over the sample set. Flagged samples carry the mass
/// at infinity where the bump vanishes, so they contribute zero but count
/// in the normalization.
pub fn integral_criterion(
    du: &DMatrix<f64>,
    op: &OperatorId,
    set: &HessianSampleSet,
    bump: &TensorBump,
    rank_tol: f64,
) -> Result<DVector<f64>> {
    let mut acc = DVector::zeros(du.nrows());
    for (idx, sample) in set.samples.iter().enumerate() {
        if set.at_infinity[idx] {
            continue;
        }
        let w = bump.eval(sample);
        if w == 0.0 {
            continue;
        }
        let jet = jet_with(du, sample);
        acc += w * op.apply(&jet, rank_tol)?;
    }
    Ok(acc / set.samples.len() as f64)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiffuseParams {
    pub blowup: f64,
    pub cluster_eps: f64,
    pub tail_fraction: f64,
    pub residual_threshold: f64,
    pub kappa: f64,
    pub rank_tol: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NodeOutcome {
    pub node: usize,
    pub residual: f64,
    pub infinity_weight: f64,
    pub atom_count: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FieldCheckOutcome {
    pub nodes: Vec<NodeOutcome>,
    /// Nodes with no mass at infinity; only these enter the budget.
    pub eligible: usize,
    /// Eligible nodes whose residual exceeds the threshold.
    pub exceptional: usize,
    /// Nodes carrying any mass at infinity.
    pub infinity_nodes: usize,
    pub pass: bool,
}

/// Runs samples -> support -> residual on every node of the set and
/// applies the almost-everywhere surrogate: at most a `kappa` fraction of
/// the eligible nodes may exceed the residual threshold. Nodes with mass
/// at infinity are excluded from the budget and reported separately.
pub fn d_solution_field_check(
    grad: &GradientField,
    node_set: &[usize],
    op: &OperatorId,
    steps_cells: &[i64],
    params: &DiffuseParams,
) -> Result<FieldCheckOutcome> {
    op.validate()?;
    let mut nodes = Vec::with_capacity(node_set.len());
    let mut eligible = 0usize;
    let mut exceptional = 0usize;
    let mut infinity_nodes = 0usize;
    for &k in node_set {
        let set = hessian_samples_from_gradient(grad, k, steps_cells, params.blowup)?;
        let support = support_estimate(&set, params.cluster_eps, params.tail_fraction)?;
        let du = grad.matrix_at(k);
        let residual = d_solution_residual(&du, op, &support, params.rank_tol)?;
        if support.infinity_weight > 0.0 {
            infinity_nodes += 1;
        } else {
            eligible += 1;
            if residual > params.residual_threshold {
                exceptional += 1;
            }
        }
        nodes.push(NodeOutcome {
            node: k,
            residual,
            infinity_weight: support.infinity_weight,
            atom_count: support.atoms.len(),
        });
    }
    let pass = exceptional as f64 <= params.kappa * eligible as f64;
    Ok(FieldCheckOutcome {
        nodes,
        eligible,
        exceptional,
        infinity_nodes,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, gradient_field, DEFAULT_BLOWUP_THRESHOLD};
    use crate::solutions::AnalyticSolution;

    fn gradient_of(sol: &AnalyticSolution, bounds: &[(f64, f64)], res: usize) -> GradientField {
        let d = build_domain(bounds, &vec![res; bounds.len()]).unwrap();
        let u = sol.sample(&d, false).unwrap();
        gradient_field(&u).unwrap()
    }

    #[test]
    fn quadratic_samples_are_identity() {
        // Gradient of |x|^2/2 is linear, so every quotient equals I exactly.
        let g = gradient_of(&AnalyticSolution::quadratic_bowl(2), &[(1.0, 2.0), (1.0, 2.0)], 65);
        let node = g.domain().flat_index(&[32, 32]);
        let set = hessian_samples_from_gradient(
            g_ref(&g),
            node,
            &DEFAULT_STEPS_CELLS,
            DEFAULT_BLOWUP_THRESHOLD,
        )
        .unwrap();
        for (i, s) in set.samples.iter().enumerate() {
            assert!(!set.at_infinity[i]);
            assert!((s.get(0, 0, 0) - 1.0).abs() <= 1e-10);
            assert!((s.get(0, 1, 1) - 1.0).abs() <= 1e-10);
            assert!(s.get(0, 0, 1).abs() <= 1e-10);
        }
    }

    fn g_ref(g: &GradientField) -> &GradientField {
        g
    }

    #[test]
    fn linear_samples_are_zero() {
        let sol = AnalyticSolution::linear(
            vec![0.0],
            nalgebra::DMatrix::from_row_slice(1, 2, &[2.0, -1.0]),
        );
        let g = gradient_of(&sol, &[(0.0, 1.0), (0.0, 1.0)], 65);
        let node = g.domain().flat_index(&[32, 32]);
        let set =
            hessian_samples_from_gradient(&g, node, &DEFAULT_STEPS_CELLS, DEFAULT_BLOWUP_THRESHOLD)
                .unwrap();
        for s in &set.samples {
            assert!(s.norm() <= 1e-12);
        }
        let support = support_estimate(&set, 0.1, DEFAULT_TAIL_FRACTION).unwrap();
        assert_eq!(support.atoms.len(), 1);
        assert!(support.atoms[0].0.norm() <= 1e-12);
        assert_eq!(support.infinity_weight, 0.0);
    }

    #[test]
    fn smooth_member_single_atom_near_analytic() {
        let sol = AnalyticSolution::exp_sin();
        let d = build_domain(&[(0.0, 1.0), (0.0, 1.0)], &[129, 129]).unwrap();
        let u = sol.sample(&d, false).unwrap();
        let g = gradient_field(&u).unwrap();
        let node = d.flat_index(&[64, 64]);
        let set =
            hessian_samples_from_gradient(&g, node, &DEFAULT_STEPS_CELLS, DEFAULT_BLOWUP_THRESHOLD)
                .unwrap();
        let h = d.spacing()[0];
        let support =
            support_estimate(&set, DEFAULT_CLUSTER_EPS_FACTOR * h, DEFAULT_TAIL_FRACTION).unwrap();
        assert_eq!(support.atoms.len(), 1);
        let (atom, w) = &support.atoms[0];
        assert!((w - 1.0).abs() <= 1e-12);
        let exact = sol.hessian_at(&d.node_coord(node));
        assert!(atom.distance(&exact) <= 10.0 * h, "distance {}", atom.distance(&exact));
    }

    #[test]
    fn aronsson_axis_nodes_are_flagged() {
        // On the axis the curvature of |x|^{4/3} scales like h^{-2/3}; with
        // M = 10 every tail sample at cell scale blows past the threshold.
        let sol = AnalyticSolution::aronsson();
        let d = build_domain(&[(-1.0, 1.0), (1.0, 2.0)], &[201, 101]).unwrap();
        let u = sol.sample(&d, true).unwrap();
        let g = gradient_field(&u).unwrap();
        let node = d.flat_index(&[100, 50]);
        assert_eq!(d.node_coord(node)[0], 0.0);
        let set = hessian_samples_from_gradient(&g, node, &DEFAULT_STEPS_CELLS, 10.0).unwrap();
        let h = d.spacing()[0];
        let support =
            support_estimate(&set, DEFAULT_CLUSTER_EPS_FACTOR * h, DEFAULT_TAIL_FRACTION).unwrap();
        assert_eq!(support.infinity_weight, 1.0);
        assert!(support.atoms.is_empty());
        // Trivial satisfaction: empty reduced support gives residual 0.
        let du = g.matrix_at(node);
        let r = d_solution_residual(
            &du,
            &OperatorId::InfinityTangential,
            &support,
            crate::operators::DEFAULT_RANK_TOL,
        )
        .unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn weights_normalize() {
        let sol = AnalyticSolution::exp_sin();
        let g = gradient_of(&sol, &[(0.0, 1.0), (0.0, 1.0)], 65);
        let node = g.domain().flat_index(&[40, 24]);
        let set =
            hessian_samples_from_gradient(&g, node, &DEFAULT_STEPS_CELLS, DEFAULT_BLOWUP_THRESHOLD)
                .unwrap();
        // Tiny cluster radius: every tail sample becomes its own atom.
        let support = support_estimate(&set, 1e-15, 1.0).unwrap();
        let total: f64 =
            support.atoms.iter().map(|(_, w)| w).sum::<f64>() + support.infinity_weight;
        assert!((total - 1.0).abs() <= 1e-12);
        assert!(support.atoms.len() >= 2);
    }

    #[test]
    fn support_needs_three_steps() {
        let sol = AnalyticSolution::exp_sin();
        let g = gradient_of(&sol, &[(0.0, 1.0), (0.0, 1.0)], 65);
        let node = g.domain().flat_index(&[32, 32]);
        let set = hessian_samples_from_gradient(&g, node, &[4, 2], DEFAULT_BLOWUP_THRESHOLD)
            .unwrap();
        assert!(support_estimate(&set, 0.1, 0.5).is_err());
    }

    #[test]
    fn integral_criterion_examples() {
        // Quadratic bowl at (1, 0)-ish anchor: every sample is exactly I,
        // the bump centered at I evaluates to 1, tangential value is |x|^2.
        let sol = AnalyticSolution::quadratic_bowl(2);
        let d = build_domain(&[(0.5, 1.5), (-0.5, 0.5)], &[65, 65]).unwrap();
        let u = sol.sample(&d, false).unwrap();
        let g = gradient_field(&u).unwrap();
        let node = d.flat_index(&[32, 32]); // (1, 0)
        assert_eq!(d.node_coord(node), vec![1.0, 0.0]);
        let set =
            hessian_samples_from_gradient(&g, node, &DEFAULT_STEPS_CELLS, DEFAULT_BLOWUP_THRESHOLD)
                .unwrap();
        let du = g.matrix_at(node);
        let mut eye = SymTensor::zeros(1, 2);
        eye.set(0, 0, 0, 1.0);
        eye.set(0, 1, 1, 1.0);
        let bump = TensorBump {
            center: eye.clone(),
            radius: 1.0,
        };
        let v = integral_criterion(
            &du,
            &OperatorId::InfinityTangential,
            &set,
            &bump,
            crate::operators::DEFAULT_RANK_TOL,
        )
        .unwrap();
        assert!((v[0] - 1.0).abs() <= 1e-8, "integral {}", v[0]);

        // Bump supported away from every sample: exactly zero.
        let mut far = SymTensor::zeros(1, 2);
        far.set(0, 0, 0, 50.0);
        let bump = TensorBump {
            center: far,
            radius: 1.0,
        };
        let v = integral_criterion(
            &du,
            &OperatorId::InfinityTangential,
            &set,
            &bump,
            crate::operators::DEFAULT_RANK_TOL,
        )
        .unwrap();
        assert_eq!(v[0], 0.0);
    }

    #[test]
    fn sup_integral_consistency_on_corpus() {
        // Where the sup-form residual vanishes, the integral form vanishes
        // for bumps centered at the atoms.
        let sol = AnalyticSolution::linear(
            vec![1.0],
            nalgebra::DMatrix::from_row_slice(1, 2, &[0.4, 0.6]),
        );
        let g = gradient_of(&sol, &[(0.0, 1.0), (0.0, 1.0)], 65);
        let node = g.domain().flat_index(&[32, 32]);
        let set =
            hessian_samples_from_gradient(&g, node, &DEFAULT_STEPS_CELLS, DEFAULT_BLOWUP_THRESHOLD)
                .unwrap();
        let support = support_estimate(&set, 0.1, DEFAULT_TAIL_FRACTION).unwrap();
        let du = g.matrix_at(node);
        let r = d_solution_residual(
            &du,
            &OperatorId::InfinityFull,
            &support,
            crate::operators::DEFAULT_RANK_TOL,
        )
        .unwrap();
        assert!(r <= 1e-10);
        for (atom, _) in &support.atoms {
            let bump = TensorBump {
                center: atom.clone(),
                radius: support.cluster_eps.max(1e-6),
            };
            let v = integral_criterion(
                &du,
                &OperatorId::InfinityFull,
                &set,
                &bump,
                crate::operators::DEFAULT_RANK_TOL,
            )
            .unwrap();
            assert!(v.norm() <= 1e-10);
        }
    }

    #[test]
    fn field_check_examples() {
        // Linear map passes everywhere.
        let sol = AnalyticSolution::linear(
            vec![0.0],
            nalgebra::DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        );
        let d = build_domain(&[(0.0, 1.0), (0.0, 1.0)], &[65, 65]).unwrap();
        let u = sol.sample(&d, false).unwrap();
        let g = gradient_field(&u).unwrap();
        let nodes = d.interior_nodes(8);
        let params = DiffuseParams {
            blowup: DEFAULT_BLOWUP_THRESHOLD,
            cluster_eps: DEFAULT_CLUSTER_EPS_FACTOR * d.spacing()[0],
            tail_fraction: DEFAULT_TAIL_FRACTION,
            residual_threshold: 1e-12,
            kappa: DEFAULT_KAPPA,
            rank_tol: crate::operators::DEFAULT_RANK_TOL,
        };
        let out = d_solution_field_check(
            &g,
            &nodes,
            &OperatorId::InfinityFull,
            &DEFAULT_STEPS_CELLS,
            &params,
        )
        .unwrap();
        assert!(out.pass);
        assert_eq!(out.exceptional, 0);

        // The bowl fails against the tangential operator: residual ~ |x|^2.
        let sol = AnalyticSolution::quadratic_bowl(2);
        let d = build_domain(&[(1.0, 2.0), (1.0, 2.0)], &[65, 65]).unwrap();
        let u = sol.sample(&d, false).unwrap();
        let g = gradient_field(&u).unwrap();
        let nodes = d.interior_nodes(8);
        let out = d_solution_field_check(
            &g,
            &nodes,
            &OperatorId::InfinityTangential,
            &DEFAULT_STEPS_CELLS,
            &params,
        )
        .unwrap();
        assert!(!out.pass);
        assert!(out.exceptional as f64 > 0.9 * out.eligible as f64);
    }
}
