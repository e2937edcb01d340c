use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    /// A bound check was requested outside the depth regime where the bound applies.
    #[error("precondition not met: {0}")]
    Precondition(String),
    #[error("diverged at step {step}: risk {risk:e} exceeds {threshold:e}")]
    Divergence { step: usize, risk: f64, threshold: f64 },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
