//! Experiment harness: configs, presets, sweep execution, summaries, and the
//! theory/oracle verification report.

pub mod config;
pub mod presets;
pub mod runner;
pub mod suites;
pub mod summary;
pub mod verify;

pub use config::ExperimentConfig;
pub use runner::{run_experiment, ExperimentReport};
