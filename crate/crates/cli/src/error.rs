use std::fmt;

use mgdpr_core::checkpoint::CheckpointError;
use mgdpr_core::graph_generation::GraphError;
use mgdpr_core::market_data::DataError;
use mgdpr_core::model::ModelError;
use mgdpr_core::training::TrainError;

pub const EXIT_DATA: i32 = 2;
pub const EXIT_GRAPH: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;
pub const EXIT_CONFIG: i32 = 5;
pub const EXIT_CHECKPOINT: i32 = 6;

pub const EXIT_CODES_HELP: &str = "\
Exit codes:
  0  success
  2  data error (unreadable or malformed CSV, empty input, too little history)
  3  graph error (degenerate series, day out of range, corrupt graph cache)
  4  training diverged (non-finite loss or parameters)
  5  configuration error (bad config, usage, missing or stale cache)
  6  checkpoint error (missing, corrupt, or not matching the config)";

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(EXIT_CONFIG, message)
    }

    pub fn checkpoint(message: impl Into<String>) -> Self {
        Self::new(EXIT_CHECKPOINT, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let code = match e {
            DataError::Config(_) => EXIT_CONFIG,
            _ => EXIT_DATA,
        };
        Self::new(code, e.to_string())
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        Self::new(EXIT_GRAPH, e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        Self::config(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        Self::checkpoint(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let code = match e {
            TrainError::Divergence { .. } => EXIT_DIVERGENCE,
            TrainError::Label(_) => EXIT_DATA,
            _ => EXIT_CONFIG,
        };
        Self::new(code, e.to_string())
    }
}
