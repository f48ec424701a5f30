use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("singular covariance: {0}")]
    SingularCovariance(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("empty weighted core: all weights are zero")]
    EmptyCore,
    #[error("insufficient data: have {have} records, need at least {required}")]
    InsufficientData { have: usize, required: u64 },
    #[error("configuration error: {0}")]
    ConfigError(String),
    #[error("robust filter diverged: {survivors} of {total} points survived")]
    FilterDiverged { survivors: usize, total: usize },
    #[error("refinement unstable: PSD projection moved an eigenvalue by {shift}")]
    RefinementUnstable { shift: f64 },
    #[error("calibration failed: {0}")]
    CalibrationFailed(String),
}

impl Error {
    /// Stable machine-readable code, used in CLI reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidMatrix(_) => "InvalidMatrix",
            Error::SingularCovariance(_) => "SingularCovariance",
            Error::InvalidInput(_) => "InvalidInput",
            Error::EmptyCore => "EmptyCore",
            Error::InsufficientData { .. } => "InsufficientData",
            Error::ConfigError(_) => "ConfigError",
            Error::FilterDiverged { .. } => "FilterDiverged",
            Error::RefinementUnstable { .. } => "RefinementUnstable",
            Error::CalibrationFailed(_) => "CalibrationFailed",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
