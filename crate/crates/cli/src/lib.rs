//! Command-line driver: declarative configs in, CSV, JSON and SVG out.

pub mod config;
pub mod error;
pub mod report;
pub mod run;
pub mod svg;
pub mod tables;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::CliError;
pub use report::{run_report, run_stats};
pub use run::{run_experiment, RunOptions};
