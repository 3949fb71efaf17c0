use dermfuse_core::checkpoint::CheckpointError;
use dermfuse_core::data::DataError;
use dermfuse_core::train::TrainError;
use thiserror::Error;

/// Failure of one command, grouped by the exit code it maps to.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("fusion input error: {0}")]
    FusionInput(String),
}

impl CliError {
    /// 2 config, 3 data, 4 training, 5 checkpoint, 6 fusion input.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Training(_) => 4,
            CliError::Checkpoint(_) => 5,
            CliError::FusionInput(_) => 6,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(msg) => CliError::Config(msg),
            other => CliError::Training(other.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Checkpoint(e.to_string())
    }
}
