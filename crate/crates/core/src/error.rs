//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Sequence lengths are inconsistent with the horizon.
    #[error("length mismatch: {context} (expected {expected}, got {got})")]
    LengthMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// The Riccati recursion hit a zero denominator r_t + P_{t+1} b^2.
    #[error("degenerate cost at stage {stage}: r_t + P_{{t+1}} b^2 = 0")]
    DegenerateCost { stage: usize },

    /// The candidate product space exceeds the configured budget.
    #[error("candidate space too large: {candidates} candidates exceed budget {budget}")]
    CapacityExceeded { candidates: u128, budget: u64 },

    /// A state fell outside a grid by more than one spacing.
    #[error("{axis} value {value} outside grid [{min}, {max}] by more than one spacing")]
    OutOfRange {
        axis: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    /// No candidate trajectory satisfied the coupled equations.
    #[error(
        "no fixed point: best residual {best_residual} exceeds threshold {threshold} \
         (grids too coarse or beta pathological)"
    )]
    NoFixedPoint { best_residual: f64, threshold: f64 },

    /// The proxy-cost stage objective is concave in the control (no minimizer).
    #[error("proxy cost ill-posed at stage {stage}: control curvature {curvature} <= 0")]
    IllPosed { stage: usize, curvature: f64 },

    /// The coupled fixed-point system is singular for this policy.
    #[error("coupled equations singular: no isolated fixed point for this beta")]
    SingularCoupling,

    /// A learning iterate left the finite range or blew past the guard.
    #[error("divergence: {0}")]
    Divergence(String),

    /// A finite-difference probe failed; carries which component was probed.
    #[error("gradient probe for component {component} failed: {source}")]
    ProbeFailed {
        component: usize,
        #[source]
        source: Box<Error>,
    },

    /// Configuration file problems (parse errors, unknown/missing keys).
    #[error("config error: {0}")]
    Config(String),

    /// Policy table file did not round-trip.
    #[error("policy table file corrupt: {0}")]
    TableFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
