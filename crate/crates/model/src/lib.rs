//! Encoder / recurrent / decoder surrogate network, its training losses and
//! checkpoints.

pub mod checkpoint;
pub mod config;
pub mod extractor;
pub mod layers;
pub mod losses;
pub mod network;
pub mod tensor_io;

use std::path::PathBuf;

pub use config::{ModelConfig, OutputActivation, SkipMerge, Upsample};
pub use extractor::{build_extractor, ExtractorSpec, FeatureExtractor, RandomConvExtractor, Vgg16Extractor};
pub use layers::{BnUpdate, Binding, Mode};
pub use losses::{total_loss, LossReport, LossSettings, LossWeights};
pub use network::{ForwardOutput, Network};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Shape(#[from] hossnet_autograd::ShapeError),
    #[error(transparent)]
    Core(#[from] hossnet_core::CoreError),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;
