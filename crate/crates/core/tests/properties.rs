//! Randomized invariants: projection laws, operator algebra, stencil
//! exactness and difference-quotient linearity.

use linfvar::grid::{build_domain, difference_quotient, GridField, GridMap};
use linfvar::operators::{
    infinity_normal, infinity_tangential, orth_projection, p_laplacian_expanded,
    DEFAULT_RANK_TOL,
};
use linfvar::tensor::SymTensor;
use linfvar::Jet;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=3, 1usize..=3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn projection_laws((nn, n) in dims(), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let du = DMatrix::from_fn(nn, n, |_, _| rng.gen_range(-1.0..1.0));
        let p = orth_projection(&du, DEFAULT_RANK_TOL);
        let m = &p.matrix;
        // Symmetry, idempotency, annihilation.
        prop_assert!((m - m.transpose()).norm() <= 1e-12);
        prop_assert!((m * m - m).norm() <= 1e-10);
        prop_assert!((m * &du).norm() <= 1e-10 * (1.0 + du.norm()));
        // Rank complement: trace(P) = N - rank(Du).
        let trace: f64 = (0..nn).map(|i| m[(i, i)]).sum();
        prop_assert!((trace - (nn - p.rank_of_range) as f64).abs() <= 1e-8);
    }

    #[test]
    fn orthogonal_splitting((nn, n) in dims(), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let du = DMatrix::from_fn(nn, n, |_, _| rng.gen_range(-1.0..1.0));
        let mut h = SymTensor::zeros(nn, n);
        for alpha in 0..nn {
            for i in 0..n {
                for j in i..n {
                    h.set_sym(alpha, i, j, rng.gen_range(-1.0..1.0));
                }
            }
        }
        let jet = Jet {
            point: vec![0.0; n],
            gradient: du.clone(),
            hessian: h.clone(),
            hessian_valid: true,
        };
        let t = infinity_tangential(&jet).unwrap();
        let nrm = infinity_normal(&jet, DEFAULT_RANK_TOL).unwrap();
        let jet_norm_sq: f64 =
            du.iter().map(|v| v * v).sum::<f64>() + h.norm() * h.norm();
        prop_assert!(t.dot(&nrm).abs() <= 1e-10 * (1.0 + jet_norm_sq * jet_norm_sq));
        // Scalar reduction: the normal part vanishes identically for N = 1.
        if nn == 1 {
            prop_assert!(nrm.norm() <= 1e-12);
        }
    }

    #[test]
    fn p2_reduces_to_norm_times_laplacian((nn, n) in dims(), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let du = DMatrix::from_fn(nn, n, |_, _| rng.gen_range(-1.0..1.0));
        let mut h = SymTensor::zeros(nn, n);
        for alpha in 0..nn {
            for i in 0..n {
                for j in i..n {
                    h.set_sym(alpha, i, j, rng.gen_range(-1.0..1.0));
                }
            }
        }
        let jet = Jet {
            point: vec![0.0; n],
            gradient: du.clone(),
            hessian: h.clone(),
            hessian_valid: true,
        };
        let lhs = p_laplacian_expanded(&jet, 2.0).unwrap();
        let norm_sq: f64 = du.iter().map(|v| v * v).sum();
        let rhs = norm_sq * h.trace_vector();
        let scale = 1.0 + rhs.norm();
        prop_assert!((lhs - rhs).norm() <= 1e-12 * scale);
    }

    #[test]
    fn difference_quotient_is_linear(
        seed in any::<u64>(),
        alpha in -2.0f64..2.0,
        beta in -2.0f64..2.0,
        cells in 1i64..4,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = build_domain(&[(0.0, 1.0), (0.0, 1.0)], &[9, 9]).unwrap();
        let count = d.node_count();
        let f = GridField { domain: d.clone(), comps: 1,
            data: (0..count).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let g = GridField { domain: d.clone(), comps: 1,
            data: (0..count).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let combo = GridField { domain: d.clone(), comps: 1,
            data: f.data.iter().zip(&g.data).map(|(a, b)| alpha * a + beta * b).collect() };
        let h = cells as f64 * d.spacing()[0];
        let df = difference_quotient(&f, 0, h).unwrap();
        let dg = difference_quotient(&g, 0, h).unwrap();
        let dc = difference_quotient(&combo, 0, h).unwrap();
        for k in 0..count {
            let expect = alpha * df.data[k] + beta * dg.data[k];
            prop_assert!((dc.data[k] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn affine_exactness(
        seed in any::<u64>(),
        n in 1usize..=3,
        nn in 1usize..=3,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        // Amplitudes and spacing chosen so value rounding divided by h^2
        // stays below the 1e-13 exactness budget.
        let d = build_domain(&vec![(0.0, 1.0); n], &vec![5; n]).unwrap();
        let g = DMatrix::from_fn(nn, n, |_, _| rng.gen_range(-0.5..0.5));
        let b: Vec<f64> = (0..nn).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let sol = linfvar::solutions::AnalyticSolution::linear(b, g.clone());
        let u: GridMap = sol.sample(&d, false).unwrap();
        let grad = linfvar::gradient_field(&u).unwrap();
        let hess = linfvar::hessian_field(&u, linfvar::DEFAULT_BLOWUP_THRESHOLD).unwrap();
        for k in 0..d.node_count() {
            let m = grad.matrix_at(k);
            prop_assert!((m - &g).norm() <= 1e-13 * (1.0 + g.norm()));
            prop_assert!(hess.tensor_at(k).max_abs() <= 1e-13);
        }
    }
}

#[test]
fn gradient_convergence_order_on_smooth_map() {
    // Max-norm gradient error of a C^4 map under spacing halving: observed
    // order >= 1.9 (the zero-error oracle is the closed-form gradient).
    let sol = linfvar::solutions::AnalyticSolution::exp_sin();
    let mut errs = Vec::new();
    for res in [17usize, 33, 65] {
        let d = build_domain(&[(0.0, 1.0), (0.0, 1.0)], &[res, res]).unwrap();
        let u = sol.sample(&d, false).unwrap();
        let grad = linfvar::gradient_field(&u).unwrap();
        let mut err = 0.0f64;
        for k in 0..d.node_count() {
            let x = d.node_coord(k);
            let exact = sol.gradient_at(&x);
            err = err.max((grad.matrix_at(k) - exact).norm());
        }
        errs.push(err);
    }
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 1.9, "observed order {order} from errors {errs:?}");
    }
}
