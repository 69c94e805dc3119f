use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("delay {delay} exceeds maximum delay {max}")]
    DelayOutOfRange { delay: usize, max: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("non-finite input in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "inverse correlation matrix lost positive definiteness at iteration {0}; re-initialize"
    )]
    NotPositiveDefinite(u64),

    #[error("code matrix has zero total power")]
    ZeroPower,

    #[error("noise variance must be positive")]
    ZeroNoise,

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("empty measurement: {0}")]
    EmptyMeasurement(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}
