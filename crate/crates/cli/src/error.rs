use std::fmt::Display;

use linker_core::fgparser::FgError;
use linker_core::formats::FormatError;
use linker_core::labels::LabelError;
use linker_core::metrics::MetricError;
use linker_core::tensor::CheckpointError;
use linker_core::training::TrainError;

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Internal(_) => "internal",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Internal(m) => m,
        }
    }

    /// The single stderr line: a JSON object with `error`, `code`, `message`.
    pub fn line(&self) -> String {
        serde_json::json!({ "error": self.kind(), "code": self.code(), "message": self.message() }).to_string()
    }

    pub fn data(context: impl Display, e: impl Display) -> Self {
        CliError::Data(format!("{context}: {e}"))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(format!("io: {e}"))
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<LabelError> for CliError {
    fn from(e: LabelError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<FgError> for CliError {
    fn from(e: FgError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(format!("checkpoint: {e}"))
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::Data { .. } | TrainError::Checkpoint(_) | TrainError::CheckpointMismatch(_) => {
                CliError::Data(e.to_string())
            }
            TrainError::Tensor(_) | TrainError::Loss(_) | TrainError::FrozenGradient(_) => {
                CliError::Internal(e.to_string())
            }
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Internal(format!("json: {e}"))
    }
}
