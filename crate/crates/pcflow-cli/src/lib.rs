//! Command-line driver for pcflow: config parsing, checkpoints and run output.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod runner;

pub use error::CliError;
