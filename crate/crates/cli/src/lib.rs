//! Config-driven experiment runner for the L-Reg toolkit.

pub mod config;
pub mod report;
pub mod runner;

pub use config::{parse_config, ConfigError, ExperimentConfig, Kind};
pub use runner::{run_experiment, RunError};
