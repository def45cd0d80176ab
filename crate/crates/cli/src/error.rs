use benchmetry::analysis::AnalysisError;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    MetaMissing(String),
    #[error("{failed} of {total} replications failed; first error: {first}")]
    Replications { failed: usize, total: usize, first: String },
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Fit(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.display().to_string(), message: e.to_string() }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "E_VALIDATION",
            CliError::MetaMissing(_) => "E_META_MISSING",
            CliError::Replications { .. } => "E_REPLICATIONS",
            CliError::Io { .. } => "E_IO",
            CliError::Fit(_) => "E_FIT",
            CliError::Internal(_) => "E_INTERNAL",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) | CliError::MetaMissing(_) => 2,
            CliError::Replications { .. } => 3,
            _ => 1,
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::TooManyFailures { failed, total, first } => CliError::Replications { failed, total, first },
            AnalysisError::Config(m) => CliError::Validation(m),
            AnalysisError::Data(d) => d.into(),
            other => CliError::Fit(other.to_string()),
        }
    }
}

impl From<benchmetry::data::DataError> for CliError {
    fn from(e: benchmetry::data::DataError) -> Self {
        use benchmetry::data::DataError;
        match e {
            DataError::Io { path, source } => CliError::Io { path, message: source.to_string() },
            other => CliError::Validation(other.to_string()),
        }
    }
}
