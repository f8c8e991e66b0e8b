//! Config-driven command line for the sparse-view CT workbench.

pub mod app;
pub mod commands;
pub mod config;
pub mod error;

pub use app::{run, Cli, Command};
pub use config::PipelineConfig;
pub use error::{CliError, Result};
