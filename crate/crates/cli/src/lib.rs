//! Library side of the `lpcd` command: run configuration, error reporting and
//! the subcommand runners.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{run, Command, RunArgs};
pub use config::RunConfig;
pub use error::CliError;
