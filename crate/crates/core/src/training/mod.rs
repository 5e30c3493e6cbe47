//! Optimization loop, hyperparameter search and checkpoints.

mod checkpoint;
mod config;
mod model;
mod optim;
mod params;
mod search;
mod train;

pub use checkpoint::{decode, encode, load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{parse_key_values, TrainConfig};
pub use model::{batch_loss, infer, representations, BatchLoss, Inference, TrainingData};
pub use optim::{clip_global_norm, Adam};
pub use params::{ModelDims, ModelParams};
pub use search::{random_search, SearchOutcome, SearchSpace, Trial};
pub use train::{epoch_seed, recall_of, train, train_from, validation_candidates, EpochRecord, Model, TrainOutcome};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint format version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint checksum mismatch (stored {expected:#010x}, computed {found:#010x})")]
    Checksum { expected: u32, found: u32 },
    #[error("non-finite loss or parameters at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error(transparent)]
    Fusion(#[from] crate::fusion::FusionError),
    #[error(transparent)]
    Head(#[from] crate::heads::HeadError),
    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),
}

pub type Result<T> = std::result::Result<T, TrainError>;
