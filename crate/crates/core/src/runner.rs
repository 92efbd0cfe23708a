//! Executes the checks of a [`RunConfig`] and writes machine-readable
//! reports: CSV tables plus JSON summaries that embed the resolved config.
//! Identical config and seed produce byte-identical outputs.

use crate::config::{CandidateSpec, CheckSpec, InputSpec, OperatorSpec, RunConfig};
use crate::diffuse::{hessian_samples_from_gradient, support_estimate};
use crate::error::{Error, Result};
use crate::functionals::variation_profile;
use crate::grid::{fmt_g17, gradient_field, hessian_field, GradientField, GridMap, HessianField};
use crate::operators::residual_field;
use crate::solutions::{self, AnalyticSolution, SolverConfig};
use crate::variations::{
    c2_tangent_family, characterization_verdict, scalar_infinity_family, scalar_p_family,
    vector_normal_family, vector_tangential_family, AffineMap, CandidateSource, FamilyTag, Sign,
    SubdomainSampler, VariationFamily, XiValue,
};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub index: usize,
    pub kind: String,
    pub passed: bool,
    pub files: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunOutcome {
    pub all_passed: bool,
    pub checks: Vec<CheckOutcome>,
}

struct ResolvedInput {
    map: GridMap,
    /// Present for corpus and solver inputs; backs analytic candidates and
    /// singular-set geometry.
    solution: Option<AnalyticSolution>,
}

fn resolve_input(config: &RunConfig) -> Result<ResolvedInput> {
    let resolved = match &config.input {
        InputSpec::Corpus {
            id,
            domain,
            acknowledge_singular,
        } => {
            let sol = solutions::find(id)?;
            let dom = domain.build()?;
            let map = sol.sample(&dom, *acknowledge_singular)?;
            ResolvedInput {
                map,
                solution: Some(sol),
            }
        }
        InputSpec::File { path } => ResolvedInput {
            map: GridMap::read_csv_file(path)?,
            solution: None,
        },
        InputSpec::Solver {
            boundary_id,
            domain,
            p,
            tolerance,
            max_iterations,
            step_rule,
            acknowledge_singular,
        } => {
            let sol = solutions::find(boundary_id)?;
            let dom = domain.build()?;
            let trace = sol.sample(&dom, *acknowledge_singular)?;
            let cfg = SolverConfig {
                p: *p,
                tolerance: *tolerance,
                max_iterations: *max_iterations,
                step_rule: step_rule.clone(),
                regularization: 1e-8,
            };
            let (map, _log) = solutions::p_harmonic_solve(&dom, &trace, &cfg)?;
            ResolvedInput {
                map,
                solution: Some(sol),
            }
        }
    };
    if let Some(spec) = &config.perturb {
        let map = solutions::perturb(&resolved.map, &spec.center, spec.radius, spec.delta)?;
        return Ok(ResolvedInput {
            map,
            solution: resolved.solution,
        });
    }
    Ok(resolved)
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(content.as_bytes())?;
    Ok(())
}

fn summary_json(config: &RunConfig, body: serde_json::Value) -> Result<String> {
    let doc = serde_json::json!({
        "config": config,
        "result": body,
    });
    Ok(format!("{}\n", serde_json::to_string_pretty(&doc)?))
}

fn tag_str(tag: FamilyTag) -> &'static str {
    match tag {
        FamilyTag::APlusInf => "a_plus_inf",
        FamilyTag::AMinusInf => "a_minus_inf",
        FamilyTag::AInfC2 => "a_inf_c2",
        FamilyTag::APlusP => "a_plus_p",
        FamilyTag::AMinusP => "a_minus_p",
        FamilyTag::ATangential => "a_tangential",
        FamilyTag::ANormal => "a_normal",
    }
}

fn param_id(member: &AffineMap) -> String {
    match &member.provenance {
        None => "const".into(),
        Some(p) => match &p.xi {
            XiValue::Scalar(x) => format!("xi={x}"),
            XiValue::Vector(v) => {
                let comps: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
                format!("xi=[{}]", comps.join(";"))
            }
            XiValue::Normal {
                direction,
                homogeneous,
            } => match homogeneous {
                Some(k) => format!("n={direction},h={k}"),
                None => format!("n={direction},particular"),
            },
        },
    }
}

/// Runs every check, writing outputs under `out_dir`.
pub fn run(config: &RunConfig, out_dir: &Path, verbose: bool) -> Result<RunOutcome> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let input = resolve_input(config)?;
    let grad = gradient_field(&input.map)?;
    let mut checks = Vec::new();
    let mut all_passed = true;
    for (index, check) in config.checks.iter().enumerate() {
        let seed = config.seed.wrapping_add(index as u64);
        let outcome = match check {
            CheckSpec::Residual {
                operator,
                threshold,
                band_margin_cells,
                blowup_threshold,
                rank_tol,
            } => run_residual(
                config,
                &input,
                index,
                out_dir,
                operator,
                *threshold,
                *band_margin_cells,
                *blowup_threshold,
                *rank_tol,
            )?,
            CheckSpec::Variational { .. } => {
                run_variational(config, &input, &grad, index, out_dir, check, seed)?
            }
            CheckSpec::Diffuse { .. } => {
                run_diffuse(config, &input, &grad, index, out_dir, check)?
            }
            CheckSpec::Profile {
                affine,
                subdomain,
                t_grid,
            } => {
                let member = affine.build()?;
                let prof = variation_profile(&grad, &member, subdomain, t_grid)?;
                let mut csv = String::from("t,h\n");
                for (t, v) in prof.t_grid.iter().zip(&prof.values) {
                    csv.push_str(&format!("{},{}\n", fmt_g17(*t), fmt_g17(*v)));
                }
                let csv_path = out_dir.join(format!("{index:02}_profile.csv"));
                write_file(&csv_path, &csv)?;
                let summary = summary_json(
                    config,
                    serde_json::json!({
                        "dini_lower": prof.dini_lower,
                        "convexity_margin": prof.convexity_margin,
                        "points": prof.t_grid.len(),
                    }),
                )?;
                let sum_path = out_dir.join(format!("{index:02}_profile_summary.json"));
                write_file(&sum_path, &summary)?;
                CheckOutcome {
                    index,
                    kind: "profile".into(),
                    passed: true,
                    files: vec![rel(&csv_path), rel(&sum_path)],
                }
            }
        };
        if verbose {
            eprintln!(
                "check {:02} [{}]: {}",
                outcome.index,
                outcome.kind,
                if outcome.passed { "pass" } else { "FAIL" }
            );
        }
        all_passed &= outcome.passed;
        checks.push(outcome);
    }
    Ok(RunOutcome { all_passed, checks })
}

fn rel(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

#[allow(clippy::too_many_arguments)]
fn run_residual(
    config: &RunConfig,
    input: &ResolvedInput,
    index: usize,
    out_dir: &Path,
    operator: &OperatorSpec,
    threshold: f64,
    band_margin_cells: usize,
    blowup_threshold: f64,
    rank_tol: f64,
) -> Result<CheckOutcome> {
    let op = operator.build()?;
    let field = residual_field(&input.map, &op, rank_tol, blowup_threshold)?;
    let domain = input.map.domain();
    let band: Option<Vec<usize>> = if band_margin_cells > 0 {
        Some(domain.interior_nodes(band_margin_cells))
    } else {
        None
    };
    let max = field.masked_max(band.as_deref());
    let mean = field.masked_mean(band.as_deref());
    let passed = max <= threshold;

    let n = domain.dim();
    let mut csv = String::new();
    let mut cols: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
    cols.push("residual".into());
    cols.push("valid".into());
    csv.push_str(&cols.join(","));
    csv.push('\n');
    let mut coord = vec![0.0; n];
    for k in 0..domain.node_count() {
        domain.node_coord_into(k, &mut coord);
        for c in &coord {
            csv.push_str(&fmt_g17(*c));
            csv.push(',');
        }
        csv.push_str(&fmt_g17(field.values[k]));
        csv.push(',');
        csv.push(if field.valid[k] { '1' } else { '0' });
        csv.push('\n');
    }
    let csv_path = out_dir.join(format!("{index:02}_residual.csv"));
    write_file(&csv_path, &csv)?;
    let summary = summary_json(
        config,
        serde_json::json!({
            "max": max,
            "mean": mean,
            "masked_fraction": field.masked_fraction(),
            "threshold": threshold,
            "band_margin_cells": band_margin_cells,
            "pass": passed,
        }),
    )?;
    let sum_path = out_dir.join(format!("{index:02}_residual_summary.json"));
    write_file(&sum_path, &summary)?;
    Ok(CheckOutcome {
        index,
        kind: "residual".into(),
        passed,
        files: vec![rel(&csv_path), rel(&sum_path)],
    })
}

fn xi_vectors(xi: &[f64], target_dim: usize) -> Vec<DVector<f64>> {
    let mut out = Vec::new();
    for alpha in 0..target_dim {
        for &x in xi {
            let mut v = DVector::zeros(target_dim);
            v[alpha] = x;
            out.push(v);
        }
    }
    out
}

fn run_variational(
    config: &RunConfig,
    input: &ResolvedInput,
    grad: &GradientField,
    index: usize,
    out_dir: &Path,
    check: &CheckSpec,
    seed: u64,
) -> Result<CheckOutcome> {
    let CheckSpec::Variational {
        family,
        subdomains,
        p,
        xi,
        lambdas,
        candidates,
        argmax_rel_tol,
        tol_slack,
        rank_tol,
        blowup_threshold,
        margin_cells,
        min_side_cells,
        matrix_samples,
    } = check
    else {
        unreachable!()
    };
    let hess: Option<HessianField> = match (family, candidates) {
        (_, CandidateSpec::GridHessian) | (FamilyTag::AInfC2, _) => {
            Some(hessian_field(&input.map, *blowup_threshold)?)
        }
        _ => None,
    };
    let cluster_default = crate::diffuse::DEFAULT_CLUSTER_EPS_FACTOR * grad.domain().spacing()[0];
    let source: Option<CandidateSource> = match candidates {
        CandidateSpec::Analytic => {
            let sol = input.solution.as_ref().ok_or_else(|| {
                Error::Config("analytic candidates need a corpus-backed input".into())
            })?;
            Some(CandidateSource::Analytic(sol))
        }
        CandidateSpec::GridHessian => Some(CandidateSource::GridHessian(hess.as_ref().unwrap())),
        CandidateSpec::Diffuse {
            steps_cells,
            tail_fraction,
            cluster_eps,
        } => Some(CandidateSource::DiffuseSupport {
            steps_cells,
            blowup: *blowup_threshold,
            cluster_eps: cluster_eps.unwrap_or(cluster_default),
            tail_fraction: *tail_fraction,
        }),
    };
    let xi_vecs = xi_vectors(xi, grad.target_dim());
    let builder = |spec: &crate::grid::SubdomainSpec| -> Result<VariationFamily> {
        match family {
            FamilyTag::APlusInf => scalar_infinity_family(
                grad,
                spec,
                Sign::Plus,
                source.as_ref().unwrap(),
                xi,
                *argmax_rel_tol,
            ),
            FamilyTag::AMinusInf => scalar_infinity_family(
                grad,
                spec,
                Sign::Minus,
                source.as_ref().unwrap(),
                xi,
                *argmax_rel_tol,
            ),
            FamilyTag::APlusP => scalar_p_family(
                grad,
                spec,
                p.unwrap(),
                Sign::Plus,
                source.as_ref().unwrap(),
                xi,
                *argmax_rel_tol,
            ),
            FamilyTag::AMinusP => scalar_p_family(
                grad,
                spec,
                p.unwrap(),
                Sign::Minus,
                source.as_ref().unwrap(),
                xi,
                *argmax_rel_tol,
            ),
            FamilyTag::AInfC2 => c2_tangent_family(
                grad,
                hess.as_ref().unwrap(),
                spec,
                &xi_vecs,
                *argmax_rel_tol,
            ),
            FamilyTag::ATangential => vector_tangential_family(
                grad,
                spec,
                source.as_ref().unwrap(),
                &xi_vecs,
                *argmax_rel_tol,
            ),
            FamilyTag::ANormal => vector_normal_family(
                grad,
                spec,
                source.as_ref().unwrap(),
                *matrix_samples,
                *argmax_rel_tol,
                *rank_tol,
            ),
        }
    };

    let sampler = SubdomainSampler {
        margin_cells: *margin_cells,
        min_side_cells: *min_side_cells,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Re-run family construction per subdomain while streaming reports.
    let mut csv = String::from("family,member,anchor_node,param,lambda,slack,pass\n");
    let mut rng_for_verdict = rng.clone();
    let verdict = characterization_verdict(
        grad,
        builder,
        lambdas,
        *subdomains,
        &sampler,
        &mut rng_for_verdict,
        *tol_slack,
    )?;
    // Second pass for the CSV dump with identical sampling.
    for _ in 0..*subdomains {
        let spec = sampler.sample(grad.domain(), &mut rng)?;
        let fam = builder(&spec)?;
        let reports =
            crate::variations::minimality_check(grad, &spec, &fam, lambdas, *tol_slack)?;
        for r in &reports {
            let member = &fam.members[r.member];
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                tag_str(r.family),
                r.member,
                r.anchor_node.map(|a| a.to_string()).unwrap_or_default(),
                param_id(member),
                fmt_g17(r.lambda),
                fmt_g17(r.slack),
                if r.pass { 1 } else { 0 }
            ));
        }
    }
    let csv_path = out_dir.join(format!("{index:02}_variational_reports.csv"));
    write_file(&csv_path, &csv)?;
    let summary = summary_json(
        config,
        serde_json::json!({
            "seed": seed,
            "verdict": verdict,
        }),
    )?;
    let sum_path = out_dir.join(format!("{index:02}_variational_verdict.json"));
    write_file(&sum_path, &summary)?;
    Ok(CheckOutcome {
        index,
        kind: "variational".into(),
        passed: verdict.consistent,
        files: vec![rel(&csv_path), rel(&sum_path)],
    })
}

fn run_diffuse(
    config: &RunConfig,
    input: &ResolvedInput,
    grad: &GradientField,
    index: usize,
    out_dir: &Path,
    check: &CheckSpec,
) -> Result<CheckOutcome> {
    let CheckSpec::Diffuse {
        operator,
        residual_threshold,
        steps_cells,
        margin_cells,
        kappa,
        blowup_threshold,
        cluster_eps,
        tail_fraction,
        rank_tol,
        singular_band,
    } = check
    else {
        unreachable!()
    };
    let op = operator.build()?;
    let domain = grad.domain();
    let margin = margin_cells
        .unwrap_or_else(|| steps_cells.iter().copied().max().unwrap_or(1).max(1) as usize);
    let mut node_set = domain.interior_nodes(margin);
    if let Some(band) = singular_band {
        let sol = input.solution.as_ref().ok_or_else(|| {
            Error::Config("singular_band needs a corpus-backed input".into())
        })?;
        let mut coord = vec![0.0; domain.dim()];
        node_set.retain(|&k| {
            domain.node_coord_into(k, &mut coord);
            let d = sol.singular_set.distance(&coord);
            d == 0.0 || d >= *band
        });
    }
    let eps = cluster_eps
        .unwrap_or(crate::diffuse::DEFAULT_CLUSTER_EPS_FACTOR * domain.spacing()[0]);

    #[derive(Serialize)]
    struct NodeDump {
        node: usize,
        point: Vec<f64>,
        residual: f64,
        infinity_weight: f64,
        atoms: Vec<Vec<f64>>,
        weights: Vec<f64>,
        asymmetry: Vec<f64>,
    }
    let mut dumps = Vec::with_capacity(node_set.len());
    let mut eligible = 0usize;
    let mut exceptional = 0usize;
    let mut infinity_nodes = 0usize;
    for &k in &node_set {
        let set = hessian_samples_from_gradient(grad, k, steps_cells, *blowup_threshold)?;
        let support = support_estimate(&set, eps, *tail_fraction)?;
        let du = grad.matrix_at(k);
        let residual = crate::diffuse::d_solution_residual(&du, &op, &support, *rank_tol)?;
        if support.infinity_weight > 0.0 {
            infinity_nodes += 1;
        } else {
            eligible += 1;
            if residual > *residual_threshold {
                exceptional += 1;
            }
        }
        dumps.push(NodeDump {
            node: k,
            point: set.point.clone(),
            residual,
            infinity_weight: support.infinity_weight,
            atoms: support
                .atoms
                .iter()
                .map(|(t, _)| t.as_slice().to_vec())
                .collect(),
            weights: support.atoms.iter().map(|(_, w)| *w).collect(),
            asymmetry: set.asymmetry.clone(),
        });
    }
    let passed = exceptional as f64 <= kappa * eligible as f64;
    let supports = serde_json::json!({
        "schedule_cells": steps_cells,
        "cluster_eps": eps,
        "nodes": dumps,
    });
    let sup_path = out_dir.join(format!("{index:02}_diffuse_supports.json"));
    write_file(&sup_path, &format!("{}\n", serde_json::to_string_pretty(&supports)?))?;
    let summary = summary_json(
        config,
        serde_json::json!({
            "nodes": node_set.len(),
            "eligible": eligible,
            "exceptional": exceptional,
            "infinity_nodes": infinity_nodes,
            "kappa": kappa,
            "residual_threshold": residual_threshold,
            "pass": passed,
        }),
    )?;
    let sum_path = out_dir.join(format!("{index:02}_diffuse_verdict.json"));
    write_file(&sum_path, &summary)?;
    Ok(CheckOutcome {
        index,
        kind: "diffuse".into(),
        passed,
        files: vec![rel(&sup_path), rel(&sum_path)],
    })
}

/// Convenience wrapper used by the binary and the C ABI: parse, run, and
/// fold the outcome into the CLI exit contract (0 pass, 1 check failed,
/// 2 config/usage error).
pub fn run_json_config(config_text: &str, out_dir: &Path, verbose: bool) -> i32 {
    let config = match RunConfig::from_json(config_text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match run(&config, out_dir, verbose) {
        Ok(outcome) => {
            if outcome.all_passed {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

pub fn out_path(out_dir: &Path, name: &str) -> PathBuf {
    out_dir.join(name)
}
