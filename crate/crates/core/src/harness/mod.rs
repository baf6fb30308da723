//! Corpus splitting, training with early stopping and the evaluation matrix.

mod experiment;
mod matrix;
mod split;
mod train;

use std::path::PathBuf;

use thiserror::Error;

use crate::model::ModelError;
use crate::tensor::CheckpointError;

pub use experiment::{checkpoint_path, state_path, DataConfig, ExperimentConfig};
pub use matrix::{run_matrix, MatrixReport, MatrixRow, MatrixSpec, REFERENCE_RELAXED_NEXT};
pub use split::{split_corpus, Splits, MIN_SPLIT_SIZE};
pub use train::{
    examples_for, orders_for, teacher_forced_accuracy, train, CurvePoint, StepReport, TrainConfig,
    TrainState, Trainer,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("corpus has {size} trees; at least {min} are required")]
    TooSmall { size: usize, min: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at step {step}")]
    Diverged { step: u64 },
    #[error("no checkpoint at {0}")]
    MissingCheckpoint(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
}
