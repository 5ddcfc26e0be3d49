use std::io;

use thiserror::Error;

/// Errors produced anywhere in the coding, linear-algebra, training and
/// runtime layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: k={k}, n={n} (need n >= k >= 1)")]
    InvalidDimensions { k: usize, n: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("worker set is not decodable")]
    NotDecodable,

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("iteration {iter} failed: {reason}")]
    IterationFailed { iter: u64, reason: String },

    #[error("training aborted after {completed} completed iterations: {source}")]
    TrainingAborted {
        completed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("environment error: {0}")]
    Environment(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }
}
