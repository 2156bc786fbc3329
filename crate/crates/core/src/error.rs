use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Bad magic, unsupported version, or an unparseable header.
    #[error("format error: {0}")]
    Format(String),

    /// Section lengths disagree with the declared header.
    #[error("corrupt container: {0}")]
    Corruption(String),

    /// Data violates a documented invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// Invalid arguments or configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    /// Argument outside the domain of a function (e.g. zero density).
    #[error("domain error: {0}")]
    Domain(String),

    /// Non-finite values appeared during an optimization.
    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the caller's inputs rather than by the tool.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Format(_)
                | Error::Corruption(_)
                | Error::Validation(_)
                | Error::Config(_)
                | Error::Shape(_)
                | Error::Domain(_)
                | Error::Json(_)
        )
    }
}
