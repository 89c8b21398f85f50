//! Process-level error taxonomy mapped onto documented exit codes.

use rsm_core::estimate::FitError;
use rsm_core::io::IoError;
use rsm_core::simulate::SimulateError;

/// Exit code 1: configuration or input-schema validation failure.
/// Exit code 2: a fit reported a diagnostic failure.
/// Exit code 3: I/O failure, including corrupt binary containers.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{context}: {source}")]
    Fit {
        context: String,
        source: FitError,
    },
    #[error("{context}: {source}")]
    File {
        context: String,
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Format {
        context: String,
        source: IoError,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Fit { .. } => 2,
            CliError::File { .. } => 3,
            // text-table schema problems are validation; binary corruption is I/O
            CliError::Format { source, .. } => match source {
                IoError::Table { .. } => 1,
                _ => 3,
            },
        }
    }

    /// Attach a file or stage context to a raw I/O error.
    pub fn file(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::File {
            context: context.into(),
            source,
        }
    }

    /// Attach a file context to a format error.
    pub fn format(context: impl Into<String>, source: IoError) -> Self {
        match source {
            IoError::Io(e) => CliError::file(context, e),
            other => CliError::Format {
                context: context.into(),
                source: other,
            },
        }
    }

    /// Attach a fit-family context to a fit diagnostic.
    pub fn fit(context: impl Into<String>, source: FitError) -> Self {
        CliError::Fit {
            context: context.into(),
            source,
        }
    }
}

impl From<SimulateError> for CliError {
    fn from(e: SimulateError) -> Self {
        CliError::Validation(e.to_string())
    }
}
