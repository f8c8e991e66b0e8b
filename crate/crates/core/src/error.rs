use std::io;

use thiserror::Error;

/// Errors raised across the workbench.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unit mismatch: expected {expected} volume, got {found}")]
    UnitMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("degenerate value range [{lo}, {hi}]")]
    DegenerateRange { lo: f64, hi: f64 },

    #[error("point lies at or behind the source plane (depth {depth} mm, dso {dso} mm)")]
    ProjectionDomain { depth: f64, dso: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("expected at least one {0}")]
    Empty(&'static str),

    #[error("index {index} out of range for axis of length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("structure mismatch: {0}")]
    StructureMismatch(String),

    #[error("numerical check failed: {0}")]
    Numerical(String),

    #[error("malformed {format} data: {reason}")]
    Format {
        format: &'static str,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
