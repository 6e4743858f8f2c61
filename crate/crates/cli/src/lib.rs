//! Experiment driver for `tcpconf`: configuration, subcommands and the files
//! they read and write.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod stats;

pub use commands::{run, Cli, Command};
pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
