use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range for size {bound}")]
    Index { index: usize, bound: usize },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{name}={value} outside the domain {domain}")]
    Domain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("eigensolver did not converge after {iterations} restarts (worst residual {worst_residual:e})")]
    Convergence {
        iterations: usize,
        worst_residual: f64,
    },

    #[error("stale cache: expected graph hash {expected:016x}, found {found:016x}")]
    StaleCache { expected: u64, found: u64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("inconsistent dataset: {0}")]
    Consistency(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
