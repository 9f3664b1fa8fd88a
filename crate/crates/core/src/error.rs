use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A hyperparameter or generator range is outside its admissible domain.
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller passed inconsistent shapes or lengths.
    #[error("usage error: {0}")]
    Usage(String),

    /// A NaN or infinity showed up in a gradient or parameter.
    #[error("non-finite value encountered at {0}")]
    NonFinite(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}
