//! Harness for kamspectra: configuration, subcommand orchestration and
//! artifact export.

pub mod commands;
pub mod config;
pub mod output;

pub use config::RunConfig;
