//! Library side of the `activecam` command: run configuration and the
//! subcommand implementations.

pub mod commands;
pub mod config;

pub use config::{ConfigError, ControllerKind, RunConfig, SeedOffset, StartWindow};
