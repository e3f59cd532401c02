use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the smoothing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point ({x}, {y}) lies outside the domain")]
    OutOfDomain { x: f64, y: f64 },

    #[error("data point {index} at ({x}, {y}) lies outside the domain")]
    PointOutsideDomain { index: usize, x: f64, y: f64 },

    #[error("no data points remain after masking")]
    EmptyData,

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("conjugate gradient stopped after {iterations} iterations with relative residual {residual:e}")]
    IterationLimit { iterations: usize, residual: f64 },

    #[error("system matrix is not positive definite (curvature {curvature:e})")]
    NotPositiveDefinite { curvature: f64 },

    #[error("sparse factorization failed: {0}")]
    Factorization(String),

    #[error("dense oracle limited to {limit} unknowns, got {size}")]
    SizeGuard { size: usize, limit: usize },

    #[error("degenerate GCV denominator: trace estimate {trace} with {n} data points")]
    DegenerateGcv { trace: f64, n: usize },

    #[error("lambda selection failed: every GCV score was degenerate")]
    SelectionFailed,

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("color images are not supported: {0}")]
    ColorImage(String),

    #[error("corrupt image header: {0}")]
    CorruptHeader(String),

    #[error("malformed CSV at line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Stream(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical solver (as opposed to bad input or I/O).
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::IterationLimit { .. }
                | Error::NotPositiveDefinite { .. }
                | Error::Factorization(_)
                | Error::DegenerateGcv { .. }
                | Error::SelectionFailed
        )
    }

    /// True for file-system and decoding failures.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Stream(_)
                | Error::UnsupportedFormat(_)
                | Error::ColorImage(_)
                | Error::CorruptHeader(_)
                | Error::Csv { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
