//! Experiment runner library behind the `cohsim` binary: config parsing,
//! scenario execution, report generation.

pub mod config;
pub mod manifest;
pub mod report;
pub mod scenario;
pub mod svg;

pub use config::ExperimentConfig;
pub use report::{run_report, ReportOptions};
pub use scenario::{run_gmi, run_model, run_scenario, run_simulate, RunError, RunOptions, RunOutput};
