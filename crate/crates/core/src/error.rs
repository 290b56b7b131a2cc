use thiserror::Error;

/// Errors raised by the numerical operators and solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(&'static str),

    #[error("operation requires {expected} norm mode")]
    NormMode { expected: &'static str },

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("state norm {norm:.6e} exceeds ball radius {radius:.6e}")]
    OutsideBall { norm: f64, radius: f64 },

    #[error("Picard iteration did not converge in {iterations} iterations (last contraction factor {factor:.4})")]
    NonConvergence { iterations: usize, factor: f64 },

    #[error("domain too small: {0}")]
    DomainTooSmall(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("step rejected: {0}")]
    StepRejected(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
