//! Experiment orchestration for the `mmse-bounds` command-line tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod validate;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
