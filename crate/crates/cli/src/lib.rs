//! Experiment harness behind the `enki` binary: flat-file configs, the four
//! benchmark experiments, and run-level metrics.

use std::fmt;

pub mod config;
pub mod experiments;
pub mod metrics;
pub mod report;

pub use config::{load_config, parse_config, ConfigError, ExperimentConfig, ExperimentKind, InitKind, Variant};
pub use experiments::{csv_outputs_match, deb_problem, run_experiment, REFERENCE_GRID};
pub use metrics::{deb_reference, fit_slope, front_coverage, reconstruction_metrics, COVERAGE_RADIUS};
pub use report::ReportBundle;

/// Harness failure split by exit code: validation problems exit 1, runtime
/// failures exit 2.
#[derive(Debug)]
pub enum HarnessError {
    Validation(ConfigError),
    Runtime(String),
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HarnessError::Validation(e) => write!(f, "{e}"),
            HarnessError::Runtime(msg) => write!(f, "runtime failure: {msg}"),
        }
    }
}

impl From<enki_core::Error> for HarnessError {
    fn from(e: enki_core::Error) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}

impl std::error::Error for HarnessError {}
