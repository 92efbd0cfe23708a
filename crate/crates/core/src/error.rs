use thiserror::Error;

/// Errors produced by grid construction, sampling, stencils and checks.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("axis {axis} has {got} nodes but the stencil needs at least {needed}")]
    Stencil {
        axis: usize,
        needed: usize,
        got: usize,
    },

    #[error("step {step} is not a nonzero integer multiple of spacing {spacing} on axis {axis}")]
    IncommensurateStep {
        axis: usize,
        step: f64,
        spacing: f64,
    },

    #[error("invalid subdomain: {0}")]
    Subdomain(String),

    #[error("subdomain contains no grid nodes: {0}")]
    EmptySubdomain(String),

    #[error("evaluation of `{id}` hits its singular set at {point:?}")]
    Singularity { id: String, point: Vec<f64> },

    #[error("`{id}` produced a non-finite value at {point:?}")]
    NonFinite { id: String, point: Vec<f64> },

    #[error("jet has an invalid hessian (blow-up flagged)")]
    InvalidJet,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown corpus id `{0}`")]
    UnknownSolution(String),

    #[error("malformed grid file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
