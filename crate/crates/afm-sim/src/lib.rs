//! Experiment harness for the tapping-mode simulator: configuration files,
//! height maps, multi-line runs and trace directories.

pub mod config;
pub mod error;
pub mod experiment;
pub mod heightmap;
pub mod output;

pub use config::{ExperimentConfig, Resolved};
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, ExperimentResult, LineResult};
