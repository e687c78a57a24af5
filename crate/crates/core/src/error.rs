//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { name: String, offset: usize },

    #[error("unbound variable `{0}`")]
    UnboundVariable(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation failed [{check}]: {detail}")]
    Validation { check: String, detail: String },

    #[error("singular matrix in {0}")]
    Singular(String),

    #[error("{context}: no convergence after {iterations} iterations (residual {residual:.3e})")]
    Convergence {
        context: String,
        iterations: usize,
        residual: f64,
    },

    #[error("matrix not in represented group (re-expansion residual {residual:.3e})")]
    NotInGroup { residual: f64 },

    #[error("dexp argument outside convergence radius (|ad| = {norm:.3e} >= 2*pi)")]
    DexpRadius { norm: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by evaluating outside a function's domain,
    /// which solvers treat as recoverable (shrink the step and retry).
    pub fn is_domain(&self) -> bool {
        matches!(self, Error::Domain(_) | Error::NonFinite(_))
    }
}
