//! Configuration, orchestration and reporting for `monou` experiments.

pub mod app;
pub mod config;
pub mod output;
pub mod pipeline;
pub mod report;

pub use config::{ConfigError, ExperimentConfig, Resolved};
pub use output::{Check, RunManifest, RunStatus};
pub use pipeline::{run, Stage};
