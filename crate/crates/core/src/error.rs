//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed grid header at key `{key}`: {reason}")]
    Format { key: String, reason: String },

    #[error("truncated grid: expected {expected} values, found {found}")]
    Truncation { expected: usize, found: usize },

    #[error("rasters are not aligned: {0}")]
    Alignment(String),

    #[error("type error: {0}")]
    Type(String),

    #[error("empty domain: {0}")]
    EmptyDomain(String),

    #[error("internal consistency error: {0}")]
    Consistency(String),

    #[error("empty channel network: {0}")]
    EmptyNetwork(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("fill error: {0}")]
    Fill(String),

    #[error("degenerate region: {0}")]
    DegenerateRegion(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("join error: {0}")]
    Join(String),

    #[error("divergence in term `{term}`: {reason}")]
    Divergence { term: String, reason: String },

    #[error("numerical error: {0}")]
    Numerical(String),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Split(_) => ErrorClass::Config,
            Error::Divergence { .. } | Error::Numerical(_) | Error::Consistency(_) => {
                ErrorClass::Numerical
            }
            _ => ErrorClass::Data,
        }
    }
}
