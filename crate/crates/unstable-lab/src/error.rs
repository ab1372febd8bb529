//! Error type shared by every module of the crate.

use std::fmt;

/// Crate-wide result alias.
pub type LabResult<T> = Result<T, LabError>;

/// Errors raised by model generation, decompositions and filter runs.
#[derive(Debug, Clone, PartialEq)]
pub enum LabError {
    /// State dimension too small or inconsistent between operands.
    InvalidDimension(String),
    /// Inconsistent or impossible configuration (step sizes, windows, indices).
    Config(String),
    /// A matrix that must be full rank is numerically rank deficient.
    Degeneracy(String),
    /// A linear solve failed or the operand is too ill-conditioned to trust.
    Conditioning(String),
    /// An iteration did not converge within its budget; carries the last residual.
    NonConvergence { what: String, residual: f64 },
    /// Cache or report I/O failure.
    Io(String),
    /// A persisted artifact does not match the expected layout or version.
    Format(String),
}

impl fmt::Display for LabError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabError::InvalidDimension(msg) => write!(f, "invalid dimension: {msg}"),
            LabError::Config(msg) => write!(f, "configuration error: {msg}"),
            LabError::Degeneracy(msg) => write!(f, "degenerate input: {msg}"),
            LabError::Conditioning(msg) => write!(f, "conditioning failure: {msg}"),
            LabError::NonConvergence { what, residual } => {
                write!(f, "{what} did not converge (last residual {residual:.3e})")
            }
            LabError::Io(msg) => write!(f, "i/o error: {msg}"),
            LabError::Format(msg) => write!(f, "format error: {msg}"),
        }
    }
}

impl std::error::Error for LabError {}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}
