//! Batch experiment driver for the frequency-adversarial toolkit.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

pub use config::{parse_config, ConfigError, ExperimentConfig, Overrides};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),

    #[error("missing {what}: {}", path.display())]
    MissingInput { what: &'static str, path: PathBuf },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] freqadv_core::Error),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for absent inputs, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::MissingInput { .. } => 2,
            _ => 1,
        }
    }
}
