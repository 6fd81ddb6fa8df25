//! Experiment configuration, policy/seed sweeps and their on-disk outputs.

pub mod config;
pub mod stats;
pub mod suite;

pub use config::{load_config, ExperimentConfig};
pub use suite::{run_suite, SuiteOptions, SuiteOutput, SuiteSummary};
