//! Adam, learning-rate schedules and the training stages.

mod optim;
mod schedule;
mod stage;

use alloc::string::String;

pub use optim::{Adam, AdamConfig};
pub use schedule::{Schedule, ScheduleKind};
pub use stage::{
    apply_frozen, concept_eval_loss, nle_eval_loss, run_stage, train_concepts, train_nle, LossRecord, StageConfig,
    StageKind, StageReport, Trainable,
};

use crate::model::ModelError;
use crate::numerics::NumericsError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainingError {
    #[error("stage configuration: {0}")]
    Config(String),
    #[error("data does not fit the stage: {0}")]
    Schema(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("non-finite gradient in {name}[{index}] = {value}")]
    NonFiniteGradient { name: String, index: usize, value: f64 },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("optimizer: {0}")]
    Optimizer(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
