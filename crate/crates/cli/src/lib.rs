//! IO, file formats, configuration, and the command-line entry points for the
//! `morphsim-core` pipeline.

pub mod commands;
pub mod config;
pub mod formats;
pub mod train;

pub use commands::{run, Cli, CliError};
