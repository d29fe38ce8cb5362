//! Command-line surface: configuration file and the `semguide` verbs.

pub mod commands;
pub mod config;

pub use commands::{run, Cli, Command};
pub use config::RunConfig;
