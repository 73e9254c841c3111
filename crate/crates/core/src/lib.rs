//! Generalized covariant Hamilton systems on Poisson-W manifolds.
//!
//! The crate provides:
//!
//! - [`expr`]: a small expression language for smooth scalar fields on ℝⁿ,
//!   with a parser, printer, and evaluator that is generic over the numeric
//!   carrier.
//! - [`num`]: nestable forward-mode jets. Nesting the carrier inside itself
//!   yields exact second and third derivatives.
//! - [`manifold`]: the Poisson-W manifold (antisymmetric structure matrix
//!   `J(x)`, structure function `χ`, optional anholonomic frame), the
//!   covariant operator `D = E + A`, the generalized Poisson-W bracket and
//!   its decomposition, and the associated vector fields.
//! - [`frame`]: structure functions of an anholonomic frame, the curvature
//!   commutator, Qsu quantities, generalized forces, and reciprocal-force
//!   diagnostics.
//! - [`dynamics`]: trajectory integration (RK4 and Dormand–Prince 5(4)),
//!   covariant transport, the second-order operator, covariant forces, and
//!   the divergence / operator identities.
//! - [`audit`]: a registry of bracket/frame/dynamics identities that samples
//!   a scenario box and classifies each identity as algebraically forced or
//!   merely reported.

pub mod audit;
pub mod dynamics;
pub mod expr;
pub mod frame;
pub mod linalg;
pub mod manifold;
pub mod num;
pub mod rng;

pub use expr::{parse, ParseError, ScalarExpr, VarNames};
pub use manifold::PoissonWManifold;
pub use num::{Dual, Jet, Num};

/// Errors produced by evaluation and by manifold/frame operations.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// Evaluation left the domain of a primitive (log of a non-positive
    /// value, division by zero, fractional power of a non-positive base, ...).
    #[error("numeric domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },

    /// A result or derivative overflowed to a non-finite value.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    /// Point/expression dimension disagreement.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The structure matrix failed its antisymmetry check at a point.
    #[error("structure matrix not antisymmetric at sample point: |J[{i}][{j}] + J[{j}][{i}]| = {violation:e}")]
    NotAntisymmetric { i: usize, j: usize, violation: f64 },

    /// The frame matrix is too close to singular at a point.
    #[error("frame ill-conditioned at sample point (cond ≈ {cond:e})")]
    IllConditioned { cond: f64 },

    /// Operation requires an even-dimensional phase space.
    #[error("{op} requires an even dimension (phase-space split), got n = {n}")]
    OddDimension { op: &'static str, n: usize },

    /// Operation requires the canonical structure matrix.
    #[error("{op} is defined only for the canonical structure matrix")]
    NotCanonical { op: &'static str },

    /// Invalid configuration (step sizes, sample counts, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The integrator failed (NaN state or adaptive step underflow).
    #[error("integration failed at t = {t}: {msg}")]
    Integration { t: f64, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;
