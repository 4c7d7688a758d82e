//! Experiment runner: reads a JSON experiment file, runs the solve and the
//! requested checks, and writes `summary.json`, `manifest.json` and
//! per-check reports.

pub mod config;
pub mod error;
pub mod runner;

pub use config::{CheckSpec, EngineConfig, ExperimentConfig, InitialPath, ModelRef};
pub use error::{CliError, Result};
pub use runner::{run, sweep, CheckSummary, RunOptions, RunOutcome, Summary, SweepRow, EXIT_CHECK_FAILED, EXIT_ERROR, EXIT_OK, SWEEP_AXES};
