use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    Dimension(String),

    #[error("channel matrix is rank deficient (|r_{index}{index}| = {diag:e})")]
    SingularChannel { index: usize, diag: f64 },

    #[error("enumeration budget exceeded: {needed} candidates > budget {budget}")]
    Budget { needed: u128, budget: u128 },

    #[error("unsupported constellation order {0} (expected 4, 16 or 64)")]
    UnsupportedConstellation(u32),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Budget { .. } => 3,
            Error::Io { .. } => 4,
            _ => 2,
        }
    }
}
