use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("missing upstream artifact {} (run `{stage}` first)", path.display())]
    MissingUpstreamArtifact { path: PathBuf, stage: &'static str },
    #[error("upstream artifact {} is out of date: {reason}", path.display())]
    StaleUpstreamArtifact { path: PathBuf, reason: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("predictor unavailable: {0}")]
    PredictorUnavailable(String),
    #[error("{0}")]
    Fatal(String),
    #[error("io error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::ConfigInvalid(_) => "ConfigInvalid",
            CliError::MissingUpstreamArtifact { .. } => "MissingUpstreamArtifact",
            CliError::StaleUpstreamArtifact { .. } => "StaleUpstreamArtifact",
            CliError::InvalidInput(_) => "InvalidInput",
            CliError::PredictorUnavailable(_) => "PredictorUnavailable",
            CliError::Fatal(_) => "Fatal",
            CliError::Io { .. } => "Io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigInvalid(_)
            | CliError::MissingUpstreamArtifact { .. }
            | CliError::StaleUpstreamArtifact { .. }
            | CliError::InvalidInput(_)
            | CliError::PredictorUnavailable(_) => EXIT_INVALID,
            CliError::Fatal(_) | CliError::Io { .. } => EXIT_FATAL,
        }
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_FATAL: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

/// One item of a batch that could not be processed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct ItemFailure {
    pub item: String,
    pub error: String,
}

/// Machine-readable summary printed on stderr for every non-zero exit.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorSummary {
    pub status: &'static str,
    pub stage: String,
    pub kind: String,
    pub message: String,
    pub failures: Vec<ItemFailure>,
}

impl ErrorSummary {
    pub fn from_error(stage: &str, e: &CliError) -> Self {
        ErrorSummary {
            status: if e.exit_code() == EXIT_INVALID { "invalid" } else { "error" },
            stage: stage.to_string(),
            kind: e.kind().to_string(),
            message: e.to_string(),
            failures: Vec::new(),
        }
    }

    pub fn partial(stage: &str, failures: Vec<ItemFailure>) -> Self {
        ErrorSummary {
            status: "partial",
            stage: stage.to_string(),
            kind: "PartialFailure".to_string(),
            message: format!("{} item(s) failed", failures.len()),
            failures,
        }
    }
}
