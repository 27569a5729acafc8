use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("`{name}` out of domain: {reason}")]
    Domain { name: &'static str, reason: String },

    #[error("unsupported model: {0}")]
    Unsupported(String),

    #[error("unstable configuration: {0}")]
    Unstable(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("signal too short: need at least {required} samples, got {actual}")]
    TooShort { required: usize, actual: usize },

    #[error("no resolvable peak: {0}")]
    NoPeak(String),

    #[error("degenerate result: {0}")]
    Degenerate(String),

    #[error("invalid config for scenario `{scenario}` at `{path}`: {message}")]
    Config { scenario: String, path: String, message: String },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(name: &'static str, reason: impl Into<String>) -> Error {
    Error::Domain { name, reason: reason.into() }
}

/// Rejects NaN, infinities and values not strictly positive.
pub(crate) fn require_positive(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(domain(name, format!("must be finite and > 0, got {value}")))
    }
}

pub(crate) fn require_non_negative(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(domain(name, format!("must be finite and >= 0, got {value}")))
    }
}
