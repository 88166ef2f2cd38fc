//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum ClsnaError {
    /// Malformed or inconsistent user input (data files, shapes, configs).
    #[error("input error: {0}")]
    Input(String),

    /// A numeric computation produced a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An optimization run hit its iteration budget without meeting the
    /// stopping rule where convergence was required.
    #[error("non-convergence: {0}")]
    NonConvergence(String),

    /// The anchored maximum exceeded the unperturbed maximum, so the implied
    /// curvature is non-positive. Usually means the mode fit is unconverged
    /// or the perturbation is too small.
    #[error("degenerate curvature estimate: {0}")]
    Degeneracy(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl ClsnaError {
    pub fn input(msg: impl Into<String>) -> Self {
        ClsnaError::Input(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        ClsnaError::Numeric(msg.into())
    }

    /// Process exit code for the CLI: 2 input, 3 numeric, 4 non-convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            ClsnaError::Input(_) => 2,
            ClsnaError::Numeric(_) | ClsnaError::Degeneracy(_) => 3,
            ClsnaError::NonConvergence(_) => 4,
            ClsnaError::Io(_) | ClsnaError::Json(_) | ClsnaError::Csv(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClsnaError>;
