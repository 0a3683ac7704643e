use thiserror::Error;

#[derive(Debug, Error)]
pub enum PopError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("artifact error: {0}")]
    Artifact(String),
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PopError>;

pub(crate) fn config_err(msg: impl Into<String>) -> PopError {
    PopError::Config(msg.into())
}
