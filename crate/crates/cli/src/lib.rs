//! Command-line driver for the `betacfg` toy laboratory: dataset
//! generation, training, sampling, evaluation, sweeps and plots.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod plot;

pub use commands::{run, Command};
pub use config::{RunConfig, RunDir};
pub use error::{CliError, CliResult};
