use thiserror::Error;

/// Errors raised by estimation, fitting and I/O routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("state {state} is outside the alphabet of size {size}")]
    Domain { state: u32, size: usize },

    #[error("action {action} is outside the action set of size {size}")]
    ActionDomain { action: u32, size: usize },

    #[error("policy overlap violated at (action {action}, state {state}): behavior mass is zero")]
    OverlapViolation { action: u32, state: u32 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("non-finite weight {value} at record {index}")]
    NonFiniteWeight { index: usize, value: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
