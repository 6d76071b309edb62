use thiserror::Error;

use crate::objective::LossBreakdown;

#[derive(Debug, Error)]
pub enum CifmError {
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
    #[error("internal consistency error: {0}")]
    Consistency(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("training aborted at epoch {epoch}, step {step}: non-finite loss {breakdown:?}")]
    NonFiniteLoss { epoch: usize, step: usize, breakdown: Box<LossBreakdown> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CifmError>;
