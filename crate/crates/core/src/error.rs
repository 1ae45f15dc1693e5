use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid data: {0}")]
    Invariant(String),

    #[error("insufficient data: {surviving} complete periods survive, at least 2 required")]
    InsufficientData { surviving: usize },

    #[error("scaling error: {0}")]
    Scaling(String),

    #[error("degenerate range: min = max = {0}")]
    DegenerateRange(f64),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("non-finite value in layer {layer} of conditioner network")]
    Overflow { layer: usize },

    #[error("training diverged: non-finite log-likelihood at row {row}")]
    Diverged { row: usize },

    #[error("bandwidth error: {0}")]
    Bandwidth(String),

    #[error("model format error: {0}")]
    Format(String),

    #[error("unsupported model format version {found} (this build reads major version {supported})")]
    Version { found: u32, supported: u32 },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Argument(_) | Error::Dimension { .. } => ErrorClass::Usage,
            Error::Numerical(_)
            | Error::Overflow { .. }
            | Error::Diverged { .. }
            | Error::Bandwidth(_) => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { expected, got });
    }
    Ok(())
}
