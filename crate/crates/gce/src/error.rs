//! Error types shared across the crate.
//!
//! Every failure is a typed [`Error`]; nothing panics on malformed input.
//! Errors fall into three classes ([`ErrorClass`]) so callers (notably the
//! CLI) can map them to distinct exit codes: configuration problems, data
//! problems, and numerical failures.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration (bad spec, out-of-range K, ...).
    #[error("config error: {0}")]
    Config(String),

    /// A cross-fitting cell whose training complement cannot support a fit.
    #[error("cross-fitting cell ({},{}) infeasible: {detail}", cell.0, cell.1)]
    FoldInfeasible { cell: (usize, usize), detail: String },

    /// A subsample that cannot support the inner estimator.
    #[error("subsample {index} infeasible: {detail}")]
    SubsampleInfeasible { index: usize, detail: String },

    /// Input data violating the declared schema.
    #[error("schema violation: {0}")]
    Schema(String),

    /// Malformed input that could not be parsed at all.
    #[error("parse error: {0}")]
    Parse(String),

    /// A design that cannot identify the estimand (e.g. an empty arm).
    #[error("degenerate design: {0}")]
    Degenerate(String),

    /// Numerical failure (singular matrix, summary singularity, ...).
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::FoldInfeasible { .. } | Error::SubsampleInfeasible { .. } => {
                ErrorClass::Config
            }
            Error::Schema(_) | Error::Parse(_) | Error::Degenerate(_) | Error::Io(_) => {
                ErrorClass::Data
            }
            Error::Numerical(_) => ErrorClass::Numerical,
        }
    }
}
