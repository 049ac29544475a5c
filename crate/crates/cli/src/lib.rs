//! Command-line front end for self-explaining models: configuration,
//! checkpoints, report files and the `senn` subcommands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod plot;
pub mod report;

pub use error::{CliError, Result};
