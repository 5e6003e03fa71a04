//! Error type shared across the crate.
//!
//! Variants are grouped by how a batch run should report them; the CLI maps
//! each group to a stable process exit code (see [`Error::exit_code`]).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A required column, key, or channel is missing or malformed.
    #[error("schema error: {0}")]
    Schema(String),

    /// Invalid option, hyperparameter, or plan configuration.
    #[error("config error: {0}")]
    Config(String),

    /// The data itself is unusable (non-monotone time, empty selection, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A numerical procedure failed (rank deficiency, divergence, ...).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A refit coefficient escaped the box constraint of the solver.
    #[error("big-M violation: |{value:.6e}| > {bound} for term {term}")]
    BigMViolation {
        term: String,
        value: f64,
        bound: f64,
    },

    /// A model file has an unknown format or version.
    #[error("format error: {0}")]
    Format(String),

    /// A model file failed its integrity check.
    #[error("corrupt file: {0}")]
    Corruption(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable exit code contract: 0 success, 1 validation failure,
    /// 2 config/schema, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Schema(_) | Error::Config(_) | Error::Format(_) => 2,
            Error::Data(_) | Error::Corruption(_) | Error::Io(_) => 3,
            Error::Numerical(_) | Error::BigMViolation { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
