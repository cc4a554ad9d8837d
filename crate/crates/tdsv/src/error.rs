use thiserror::Error;

/// Errors from file formats and corpus handling.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic")]
    BadMagic,
    #[error("truncated payload")]
    Truncated,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("corrupt data: {0}")]
    Corrupt(&'static str),
    #[error("{0}")]
    Invalid(String),
}

/// Errors from configuration parsing and validation.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Numeric failures during training or evaluation.
#[derive(Debug, Error)]
pub enum NumericError {
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("zero-norm vector in {0}")]
    ZeroNorm(&'static str),
    #[error("{0}")]
    Other(String),
}
