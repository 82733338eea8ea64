use thiserror::Error;

/// Errors raised across the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration object failed validation. `path` names the offending field.
    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    /// An operation was called with arguments outside its domain.
    #[error("argument error: {0}")]
    Argument(String),

    /// A runtime invariant (e.g. roof bounds) was violated by generated data.
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// Two paths or ensembles that must share a grid do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn argument(message: impl Into<String>) -> Self {
        Error::Argument(message.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
