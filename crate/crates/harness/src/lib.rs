//! Experiment harness: configuration, data splits, training, evaluation and
//! report emission for the crack-field surrogate.

pub mod config;
pub mod data;
pub mod evaluate;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod splits;
pub mod train;
pub mod variants;
pub mod windows;

use std::path::PathBuf;

pub use config::{ExperimentConfig, Preset, Protocol, Scenario, Variant};
pub use data::{Dataset, Experiment};
pub use evaluate::{Persistence, Reconstructor, SampleEvaluation, TestPlan, TruthOracle};
pub use manifest::RunManifest;
pub use splits::{Portion, Split};
pub use train::{EpochLog, TrainOutcome};
pub use windows::Window;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged { epoch: usize, batch: usize, detail: String },
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] hossnet_core::CoreError),
    #[error(transparent)]
    Model(#[from] hossnet_model::ModelError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("image error: {0}")]
    Image(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let path = path.into();
    move |source| HarnessError::Io { path, source }
}
