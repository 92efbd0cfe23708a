//! JSON run configuration for the `linfvar` binary. One document describes
//! the input map, the list of checks, and every tolerance; the resolved
//! form (defaults expanded) is embedded into all outputs for audit.

use crate::error::{Error, Result};
use crate::grid::{GridDomain, SubdomainSpec};
use crate::operators::OperatorId;
use crate::solutions::StepRule;
use crate::variations::FamilyTag;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub input: InputSpec,
    /// Optional bump perturbation applied to the input map.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturb: Option<PerturbSpec>,
    pub checks: Vec<CheckSpec>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.checks.is_empty() {
            return Err(Error::Config("no checks requested".into()));
        }
        for c in &self.checks {
            c.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub bounds: Vec<(f64, f64)>,
    pub resolution: Vec<usize>,
}

impl DomainSpec {
    pub fn build(&self) -> Result<GridDomain> {
        GridDomain::new(&self.bounds, &self.resolution)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSpec {
    /// A registered reference map sampled on the given domain.
    Corpus {
        id: String,
        domain: DomainSpec,
        #[serde(default)]
        acknowledge_singular: bool,
    },
    /// A serialized map file (JSON header + CSV body).
    File { path: String },
    /// Dirichlet solve with the trace of a registered map as boundary data.
    Solver {
        boundary_id: String,
        domain: DomainSpec,
        p: f64,
        #[serde(default = "default_solver_tolerance")]
        tolerance: f64,
        #[serde(default = "default_solver_iterations")]
        max_iterations: usize,
        #[serde(default)]
        step_rule: StepRule,
        #[serde(default)]
        acknowledge_singular: bool,
    },
}

fn default_solver_tolerance() -> f64 {
    1e-12
}

fn default_solver_iterations() -> usize {
    20_000
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbSpec {
    pub center: Vec<f64>,
    pub radius: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    pub tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
}

impl OperatorSpec {
    pub fn build(&self) -> Result<OperatorId> {
        let op = match self.tag.as_str() {
            "infinity_full" => OperatorId::InfinityFull,
            "infinity_tangential" => OperatorId::InfinityTangential,
            "infinity_normal" => OperatorId::InfinityNormal,
            "p_laplacian_expanded" => OperatorId::PLaplacianExpanded {
                p: self
                    .p
                    .ok_or_else(|| Error::Config("p_laplacian_expanded needs `p`".into()))?,
            },
            other => return Err(Error::Config(format!("unknown operator tag `{other}`"))),
        };
        op.validate()?;
        Ok(op)
    }
}

/// Where variational checks take their hessian candidates from.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum CandidateSpec {
    /// Closed-form hessians; requires a corpus or solver-from-corpus input.
    Analytic,
    /// Finite-difference hessian field of the input map.
    GridHessian,
    /// Atoms of the difference-quotient support estimate.
    Diffuse {
        #[serde(default = "default_steps_cells")]
        steps_cells: Vec<i64>,
        #[serde(default = "default_tail_fraction")]
        tail_fraction: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cluster_eps: Option<f64>,
    },
}

impl Default for CandidateSpec {
    fn default() -> Self {
        CandidateSpec::GridHessian
    }
}

pub fn default_steps_cells() -> Vec<i64> {
    crate::diffuse::DEFAULT_STEPS_CELLS.to_vec()
}

fn default_tail_fraction() -> f64 {
    crate::diffuse::DEFAULT_TAIL_FRACTION
}

fn default_rank_tol() -> f64 {
    crate::operators::DEFAULT_RANK_TOL
}

fn default_blowup() -> f64 {
    crate::grid::DEFAULT_BLOWUP_THRESHOLD
}

fn default_argmax_rel_tol() -> f64 {
    crate::functionals::DEFAULT_ARGMAX_REL_TOL
}

fn default_kappa() -> f64 {
    crate::diffuse::DEFAULT_KAPPA
}

fn default_margin_cells() -> usize {
    2
}

fn default_min_side_cells() -> usize {
    6
}

fn default_matrix_samples() -> usize {
    2
}

fn default_xi() -> Vec<f64> {
    crate::variations::default_xi_samples()
}

fn default_lambdas() -> Vec<f64> {
    crate::variations::default_lambda_samples()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckSpec {
    /// Residual field of a pointwise operator with a pass threshold on the
    /// mask-excluded maximum.
    Residual {
        operator: OperatorSpec,
        threshold: f64,
        #[serde(default)]
        band_margin_cells: usize,
        #[serde(default = "default_blowup")]
        blowup_threshold: f64,
        #[serde(default = "default_rank_tol")]
        rank_tol: f64,
    },
    /// Sup-norm minimality of a designated affine family over sampled
    /// subdomains.
    Variational {
        family: FamilyTag,
        subdomains: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p: Option<f64>,
        #[serde(default = "default_xi")]
        xi: Vec<f64>,
        #[serde(default = "default_lambdas")]
        lambdas: Vec<f64>,
        #[serde(default)]
        candidates: CandidateSpec,
        #[serde(default = "default_argmax_rel_tol")]
        argmax_rel_tol: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tol_slack: Option<f64>,
        #[serde(default = "default_rank_tol")]
        rank_tol: f64,
        #[serde(default = "default_blowup")]
        blowup_threshold: f64,
        #[serde(default = "default_margin_cells")]
        margin_cells: usize,
        #[serde(default = "default_min_side_cells")]
        min_side_cells: usize,
        #[serde(default = "default_matrix_samples")]
        matrix_samples: usize,
    },
    /// Per-node support estimation and pointwise criterion with the
    /// almost-everywhere budget.
    Diffuse {
        operator: OperatorSpec,
        residual_threshold: f64,
        #[serde(default = "default_steps_cells")]
        steps_cells: Vec<i64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        margin_cells: Option<usize>,
        #[serde(default = "default_kappa")]
        kappa: f64,
        #[serde(default = "default_blowup")]
        blowup_threshold: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cluster_eps: Option<f64>,
        #[serde(default = "default_tail_fraction")]
        tail_fraction: f64,
        #[serde(default = "default_rank_tol")]
        rank_tol: f64,
        /// Exclude nodes whose distance to the input's singular set lies in
        /// (0, band): the transition zone where finite steps neither
        /// resolve the hessian nor blow past the threshold. Nodes on the
        /// set itself stay in (they carry the mass at infinity).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        singular_band: Option<f64>,
    },
    /// Variation profile h(t) of one affine map over one subdomain.
    Profile {
        affine: AffineSpec,
        subdomain: SubdomainSpec,
        #[serde(default = "default_t_grid_cfg")]
        t_grid: Vec<f64>,
    },
}

fn default_t_grid_cfg() -> Vec<f64> {
    crate::functionals::default_t_grid()
}

impl CheckSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            CheckSpec::Residual { .. } => "residual",
            CheckSpec::Variational { .. } => "variational",
            CheckSpec::Diffuse { .. } => "diffuse",
            CheckSpec::Profile { .. } => "profile",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CheckSpec::Residual {
                operator,
                threshold,
                ..
            } => {
                operator.build()?;
                if !(*threshold > 0.0) {
                    return Err(Error::Config("residual threshold must be positive".into()));
                }
            }
            CheckSpec::Variational {
                subdomains,
                family,
                p,
                ..
            } => {
                if *subdomains == 0 {
                    return Err(Error::Config("zero subdomains requested".into()));
                }
                if matches!(family, FamilyTag::APlusP | FamilyTag::AMinusP) && p.is_none() {
                    return Err(Error::Config("p-Laplacian family needs `p`".into()));
                }
            }
            CheckSpec::Diffuse {
                operator,
                residual_threshold,
                kappa,
                ..
            } => {
                operator.build()?;
                if !(*residual_threshold > 0.0) {
                    return Err(Error::Config("residual threshold must be positive".into()));
                }
                if !(0.0..=1.0).contains(kappa) {
                    return Err(Error::Config("kappa must lie in [0, 1]".into()));
                }
            }
            CheckSpec::Profile { t_grid, .. } => {
                if t_grid.is_empty() || t_grid[0] != 0.0 {
                    return Err(Error::Config("t grid must start at 0".into()));
                }
                for w in t_grid.windows(2) {
                    if w[1] <= w[0] {
                        return Err(Error::Config("t grid must be increasing".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// An affine map given literally in the config.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineSpec {
    pub base_point: Vec<f64>,
    pub offset: Vec<f64>,
    /// Row-major N x n gradient.
    pub gradient: Vec<Vec<f64>>,
}

impl AffineSpec {
    pub fn build(&self) -> Result<crate::variations::AffineMap> {
        let nn = self.gradient.len();
        if nn == 0 || self.gradient.iter().any(|r| r.len() != self.gradient[0].len()) {
            return Err(Error::Config("affine gradient must be rectangular".into()));
        }
        let n = self.gradient[0].len();
        if self.base_point.len() != n || self.offset.len() != nn {
            return Err(Error::Config("affine spec dimensions disagree".into()));
        }
        let g = nalgebra::DMatrix::from_fn(nn, n, |a, i| self.gradient[a][i]);
        Ok(crate::variations::AffineMap {
            base_point: self.base_point.clone(),
            offset: self.offset.clone(),
            gradient: g,
            provenance: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_config() {
        let text = r#"{
            "seed": 7,
            "input": {"kind": "corpus", "id": "aronsson",
                      "domain": {"bounds": [[1.2, 1.8], [1.2, 1.8]],
                                 "resolution": [101, 101]}},
            "checks": [
                {"kind": "residual",
                 "operator": {"tag": "infinity_tangential"},
                 "threshold": 0.01}
            ]
        }"#;
        let cfg = RunConfig::from_json(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.checks.len(), 1);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(RunConfig::from_json("{").is_err());
        let no_checks = r#"{
            "input": {"kind": "file", "path": "u.csv"},
            "checks": []
        }"#;
        assert!(RunConfig::from_json(no_checks).is_err());
        let zero_subdomains = r#"{
            "input": {"kind": "file", "path": "u.csv"},
            "checks": [{"kind": "variational", "family": "a_plus_inf",
                        "subdomains": 0}]
        }"#;
        assert!(RunConfig::from_json(zero_subdomains).is_err());
        let bad_tgrid = r#"{
            "input": {"kind": "file", "path": "u.csv"},
            "checks": [{"kind": "profile",
                        "affine": {"base_point": [0,0], "offset": [0],
                                   "gradient": [[1, 0]]},
                        "subdomain": {"kind": "box", "center": [0.5, 0.5],
                                      "half_widths": [0.2, 0.2]},
                        "t_grid": [0.0, 0.2, 0.1]}]
        }"#;
        assert!(RunConfig::from_json(bad_tgrid).is_err());
    }

    #[test]
    fn operator_spec_roundtrip() {
        let s = OperatorSpec {
            tag: "p_laplacian_expanded".into(),
            p: Some(4.0),
        };
        assert!(matches!(
            s.build().unwrap(),
            OperatorId::PLaplacianExpanded { p } if p == 4.0
        ));
        let s = OperatorSpec {
            tag: "p_laplacian_expanded".into(),
            p: Some(0.5),
        };
        assert!(s.build().is_err());
        let s = OperatorSpec {
            tag: "nope".into(),
            p: None,
        };
        assert!(s.build().is_err());
    }
}
