//! Training, inference, evaluation, mask inspection and synthetic data
//! generation on top of the `regformer` model crate.
//!
//! Each subcommand is a plain function here so it can be driven from tests;
//! `main.rs` only parses arguments and maps errors to exit codes.

pub mod checkpoint;
pub mod config;
pub mod infer;
pub mod synth;
pub mod train;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use config::{ConfigError, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Data(#[from] regformer::data::DataError),
    #[error("model: {0}")]
    Model(#[from] regformer::model::ModelError),
    #[error("metrics: {0}")]
    Metric(#[from] regformer::metrics::MetricError),
    #[error("optimizer: {0}")]
    Optim(#[from] regformer::nn::OptimError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("checkpoint was trained with a different model config; differing keys: {}", .0.join(", "))]
    ConfigMismatch(Vec<&'static str>),
    #[error("missing input files: {}", .0.join(", "))]
    MissingFiles(Vec<String>),
    #[error("loss became non-finite at step {step}: {loss}")]
    NonFinite { step: u64, loss: f64 },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads and parses a config file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(RunConfig::parse(&text)?)
}
