//! Configuration, result cache and subcommand runner for the `fiberspec` binary.

pub mod cache;
pub mod config;
pub mod runner;

pub use config::{ConfigError, RunConfig};
pub use runner::{run, Command, Outcome, RunError, RunOptions};
