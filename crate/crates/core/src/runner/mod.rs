//! Experiment configuration, commands and reports behind the command-line tool.

pub mod commands;
pub mod config;
pub mod report;
pub mod sampling;

pub use commands::{
    cmd_curvatures, cmd_integrate, cmd_theorems, cmd_verify_connection, exit_code_for, run, Command, CommandOutput,
};
pub use config::{load_config, ExperimentConfig, Overrides, Tolerances};
pub use report::{Report, Status, Verdict};
