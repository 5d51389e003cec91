//! Experiment runner for distributed Q-learning on multiplicative-noise LQ
//! problems: configuration, presets, and the `oracle`, `run` and
//! `validate-controller` commands with their CSV, JSON and SVG outputs.

pub mod commands;
pub mod config;
pub mod output;
pub mod plot;
pub mod presets;

pub use commands::{
    cmd_oracle, cmd_run, cmd_validate_controller, exit, CliError, ControllerReport, OracleReport,
    RunMode, RunOutcome, RunStatus, RunSummary,
};
pub use config::{load_config, load_preset, ConfigError, ExperimentConfig, Overrides, Seeds};
