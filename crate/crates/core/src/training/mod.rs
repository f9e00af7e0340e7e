//! Adversarial training with hinge loss and two-timescale Adam, periodic
//! evaluation and resumable checkpoints.

mod checkpoint;
mod config;
mod loss;
mod trainer;

use std::path::PathBuf;

use thiserror::Error;

pub use checkpoint::{checkpoint_dir, Archive, EntryKind, Meta, FORMAT_VERSION};
pub use config::{ExtractorKind, TrainingConfig, KEYS, PATH_KEYS};
pub use loss::{hinge_d_grad, hinge_d_loss, hinge_g_grad, hinge_g_loss};
pub use trainer::{
    critic_hinge_backward, load_checkpoint, load_generator, resume, save_checkpoint, train, train_step, write_metrics_csv,
    Critic, Event, RunOutput, Sinks, StepLosses, TrainState,
};

use crate::catalog::CatalogError;
use crate::dataset::DatasetError;
use crate::metrics::MetricsError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("empty score batch")]
    EmptyBatch,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at iteration {iteration}: d_loss {d_loss}, g_loss {g_loss}")]
    NonFiniteLoss { iteration: u64, d_loss: f64, g_loss: f64 },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}
