//! Experiment runner: TOML configuration, the stage pipeline and the run
//! manifest written next to the CSV artifacts.

pub mod config;
pub mod pipeline;

pub use config::{Experiment, RunConfig};
pub use pipeline::{run, RunManifest, Stage};
