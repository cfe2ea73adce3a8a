//! Crate-wide error type and exit-code mapping.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller handed us data that violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration value is out of range or inconsistent.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// An iterative solver produced a non-finite value.
    #[error("divergence at step {step}: {what}")]
    Divergence { step: usize, what: String },

    /// Conjugate gradient failed to reach its residual target.
    #[error("cg failed to converge: residual {residual:.3e} after {iters} iterations")]
    CgNoConvergence { residual: f64, iters: usize },

    /// An operation that requires an inner optimum was handed a stale one.
    #[error("stale inner solution: {0}")]
    StalePoint(String),

    /// Numerical failure outside a named solver.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An artifact on disk does not match its expected format.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 usage, 3 format, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::InvalidConfig(_) => 2,
            Error::Format(_) | Error::Json(_) | Error::Io(_) => 3,
            Error::Divergence { .. }
            | Error::CgNoConvergence { .. }
            | Error::StalePoint(_)
            | Error::Numerical(_) => 4,
        }
    }
}
