use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid formation properties: {0}")]
    InvalidProps(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("{what} out of range: {value} not in {range}")]
    OutOfRange { what: &'static str, value: String, range: String },

    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    #[error("invalid well '{well}': {reason}")]
    InvalidWell { well: String, reason: String },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("linear solver did not converge after {iterations} iterations (relative residual {relative_residual:.3e})")]
    NonConvergence { iterations: usize, relative_residual: f64 },

    #[error("forward model failed on realization {realization}: {source}")]
    Forward {
        realization: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error at '{path}': {message}")]
    Config { path: String, message: String },

    #[error("bundle error in {path}: {message}")]
    Bundle { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics (solver breakdown, non-finite state),
    /// as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonConvergence { .. } | Error::NonFinite(_) => true,
            Error::Forward { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
