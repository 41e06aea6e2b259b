//! Objective, optimizer, training loop and classification metrics.

pub mod metrics;
pub mod objective;
mod optim;
mod report;
mod trainer;

pub use metrics::{accuracy, f1, mcc, Confusion};
pub use objective::{constraint_term, objective, Objective, CONSTRAINT_TOLERANCE};
pub use optim::Adam;
pub use report::{MeanStd, MetricsReport, MultiSeedReport, SeedSummary};
pub use trainer::{
    evaluate, prepare_examples, train, train_with, write_loss_trace, EpochRecord, Evaluation, Example, TrainConfig, TrainOutcome,
};

use thiserror::Error;

use crate::model::ModelError;
use crate::tensor::TensorError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch} (learning rate {learning_rate}); try a smaller learning rate")]
    Divergence { epoch: usize, learning_rate: f64 },
    #[error("label {0} is not a binary class")]
    Label(u8),
    #[error("mixture weights violate the simplex constraint by {0}")]
    Constraint(f64),
    #[error("no samples to evaluate")]
    EmptyEvaluation,
    #[error("no training samples")]
    EmptyTrainingSet,
    #[error("{predictions} predictions for {truth} labels")]
    LengthMismatch { predictions: usize, truth: usize },
    #[error("no graphs for day index {0}")]
    MissingGraph(usize),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
