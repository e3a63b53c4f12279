use thiserror::Error;

/// Errors raised by the numerical kernels and experiment runners.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("unsupported for this model: {0}")]
    Capability(String),
    #[error("integration failed: {0}")]
    Integration(String),
    #[error("accuracy check failed: {0}")]
    Accuracy(String),
    #[error("grid under-resolved: {0}")]
    Resolution(String),
    #[error("geometry violation: {0}")]
    Geometry(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("support error: {0}")]
    Support(String),
    #[error("numerical degeneracy: {0}")]
    Numerical(String),
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("invalid configuration field `{field}`: {msg}")]
    Config { field: String, msg: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }
}
