//! Experiment drivers and command implementations behind the `eptikit` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

pub use commands::{run, Cli};
pub use error::{CliError, CliResult};
