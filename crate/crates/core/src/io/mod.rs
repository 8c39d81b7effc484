//! Configuration, experiment orchestration, checkpoints and report files.

mod checkpoint;
mod config;
mod run;

pub use checkpoint::{encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointHeader};
pub use config::{
    load_config, parse_config, parse_config_in, tempered_block, ConfigErrors, ConfigIssue, Experiment, FieldSource,
    RunConfig,
};
pub use run::{run_experiment, write_outputs, Monitor, RunOutput};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{0}")]
    Config(ConfigErrors),
    #[error("checkpoint refused: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Spectral(#[from] crate::spectral::SpectralError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Noise(#[from] crate::noise::NoiseError),
    #[error(transparent)]
    Integrator(#[from] crate::integrator::IntegratorError),
    #[error(transparent)]
    Rds(#[from] crate::rds::RdsError),
}

impl IoError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Checkpoint(_) => "checkpoint",
            Self::Invalid(_) => "invalid",
            Self::Io(_) => "io",
            Self::Json(_) | Self::Csv(_) => "format",
            Self::Spectral(_) => "spectral",
            Self::Model(_) => "model",
            Self::Noise(_) => "noise",
            Self::Integrator(crate::integrator::IntegratorError::BlowUp { .. }) => "blow-up",
            Self::Integrator(_) => "integrator",
            Self::Rds(_) => "rds",
        }
    }
}
