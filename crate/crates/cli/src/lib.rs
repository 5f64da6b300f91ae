//! Batch front end: one TOML config drives simulate, represent, fit,
//! crossval and biomarkers.

pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::CliError;
