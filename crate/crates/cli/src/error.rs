use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] ppme_core::Error),
}

impl CliError {
    /// Machine-readable code written into reports.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Parse { .. } => "ParseError",
            CliError::Io(_) => "IoError",
            CliError::Usage(_) => "UsageError",
            CliError::Core(e) => e.code(),
        }
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
