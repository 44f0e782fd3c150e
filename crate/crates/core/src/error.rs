use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("batch of {0} rows is too small; batch statistics need at least 2")]
    BatchTooSmall(usize),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("incompatible models: {0}")]
    Incompatible(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("empty scenario script")]
    EmptyScript,

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
