//! Command-line harness: configuration, run directories and aggregation.

pub mod aggregate;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::main_with_args;
pub use error::CliError;
