use thiserror::Error;

use crate::fock::OccupationConfig;
use num_complex::Complex64;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("normalization violated: {what} has squared norm {norm_sqr}")]
    Normalization { what: String, norm_sqr: f64 },

    #[error("no-bunching restriction violated by {} configuration(s)", .0.len())]
    NoBunching(Vec<(OccupationConfig, Complex64)>),

    #[error("resource limit: {what} needs {needed}, cap is {cap}")]
    ResourceLimit { what: String, needed: u128, cap: u128 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unknown optical path '{0}'")]
    UnknownPath(String),

    #[error("unsupported target: {0}")]
    UnsupportedTarget(String),

    #[error("malformed input: {0}")]
    Parse(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
