//! Experiment runner for the `doic-core` simulator: config files, named
//! presets, and the files they leave behind.

pub mod config;
pub mod preset;

pub use config::{load_config, ConfigFile, SweepSpec};
pub use preset::{run_preset, ExperimentPreset, PresetOutcome, RunSettings};

/// `git describe` of the tree this binary was built from.
pub const GIT_DESCRIBE: &str = env!("DOIC_GIT_DESCRIBE");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] doic_core::Error),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("writing output: {0}")]
    Output(String),
}
