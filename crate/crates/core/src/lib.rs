//! Grid-based evaluation of the infinity-Laplacian system and the
//! p-Laplacian, sup-norm minimality tests against designated affine
//! variations, and difference-quotient hessian measures with an atom at
//! infinity.
//!
//! The pieces fit together as a pipeline: sample a map on a regular grid
//! ([`solutions`], [`grid`]), differentiate it ([`grid`]), evaluate
//! pointwise operators and residual fields ([`operators`]), measure
//! supremal energies and variation profiles ([`functionals`]), build the
//! designated affine families and test sup-norm minimality
//! ([`variations`]), or estimate hessian supports from difference
//! quotients and run the pointwise solution criterion ([`diffuse`]). The
//! [`config`] and [`runner`] modules drive all of it from a single JSON
//! document for the `linfvar` binary.

pub mod config;
pub mod diffuse;
pub mod error;
pub mod functionals;
pub mod grid;
pub mod operators;
pub mod runner;
pub mod solutions;
pub mod tensor;
pub mod variations;

pub use error::{Error, Result};
pub use grid::{
    build_domain, difference_quotient, gradient_field, hessian_field, jet_at, restrict,
    GradientField, GridDomain, GridField, GridMap, HessianField, Jet, SubdomainSpec,
    DEFAULT_BLOWUP_THRESHOLD,
};
pub use operators::{
    infinity_full, infinity_normal, infinity_tangential, orth_projection, p_laplacian_expanded,
    residual_field, OperatorId, ProjectionResult, ResidualField, DEFAULT_RANK_TOL,
};
pub use tensor::SymTensor;
