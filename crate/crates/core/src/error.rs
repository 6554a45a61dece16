use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("query ({x1}, {x2}) is outside the tabulated range")]
    OutOfRange { x1: f64, x2: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("quadrature failure: {0}")]
    Quadrature(String),

    #[error("insufficient data: need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("CFL violation: dt = {dt:.3e} exceeds the stable step; suggested dt = {suggested:.3e}")]
    Cfl { dt: f64, suggested: f64 },

    #[error("non-finite value detected in {0}")]
    NonFinite(String),

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code: 1 for validation/check failures, 2 for solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NoConvergence { .. } | Error::Cfl { .. } | Error::NonFinite(_) => 2,
            _ => 1,
        }
    }
}
