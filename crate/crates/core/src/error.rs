use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the estimator, the data generators and the file formats.
#[derive(Debug, Error)]
pub enum KivoError {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("factorization failed after jitter escalation (ridge {ridge:e}, last jitter {jitter:e})")]
    Factorization { ridge: f64, jitter: f64 },

    #[error("degenerate leverage at row {row}: 1 - H_ii = {slack:e}")]
    DegenerateLeverage { row: usize, slack: f64 },

    #[error("quadrature did not converge: order doubling changed the result by {change:e}")]
    Quadrature { change: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: String,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("replicate n = {n}, seed = {seed}: {source}")]
    Replicate {
        n: usize,
        seed: u64,
        #[source]
        source: Box<KivoError>,
    },
}

impl KivoError {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        KivoError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn dims(expected: usize, got: usize, context: &'static str) -> Self {
        KivoError::DimensionMismatch {
            expected,
            got,
            context,
        }
    }

    /// True for failures of the linear algebra rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            KivoError::Replicate { source, .. } => source.is_numerical(),
            other => matches!(
                other,
                KivoError::Factorization { .. } | KivoError::DegenerateLeverage { .. } | KivoError::Quadrature { .. }
            ),
        }
    }

    pub fn is_io(&self) -> bool {
        match self {
            KivoError::Replicate { source, .. } => source.is_io(),
            other => matches!(other, KivoError::Io { .. }),
        }
    }
}

pub type Result<T> = std::result::Result<T, KivoError>;
