use std::path::PathBuf;

use thiserror::Error;

use crate::fusion::CalibrationStats;

pub type Result<T, E = OodError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum OodError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("matrix is not positive-definite ({0}); raise the shrinkage epsilon")]
    SingularMatrix(String),

    /// Calibration split has zero spread. The stats are still usable: the
    /// normalized value of every sample is treated as 0.
    #[error("degenerate calibration: all {} values equal {}", .stats.n, .stats.mean)]
    DegenerateCalibration { stats: CalibrationStats },

    #[error("sample alignment error: {0}")]
    AlignmentError(String),

    #[error("corrupt file {}: {reason}", .path.display())]
    CorruptFile { path: PathBuf, reason: String },

    #[error("unsupported container kind {0:?}")]
    UnsupportedKind(String),

    #[error("malformed container: {0}")]
    MalformedContainer(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl OodError {
    /// Stable machine-readable name of the error variant.
    pub fn name(&self) -> &'static str {
        match self {
            OodError::InvalidInput(_) => "InvalidInput",
            OodError::DimensionMismatch { .. } => "DimensionMismatch",
            OodError::SingularMatrix(_) => "SingularMatrix",
            OodError::DegenerateCalibration { .. } => "DegenerateCalibration",
            OodError::AlignmentError(_) => "AlignmentError",
            OodError::CorruptFile { .. } => "CorruptFile",
            OodError::UnsupportedKind(_) => "UnsupportedKind",
            OodError::MalformedContainer(_) => "MalformedContainer",
            OodError::Io(_) => "Io",
            OodError::Json(_) => "Json",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        OodError::InvalidInput(msg.into())
    }

    pub(crate) fn dim(context: &'static str, expected: usize, found: usize) -> Self {
        OodError::DimensionMismatch {
            context,
            expected,
            found,
        }
    }
}
