//! Config-driven experiment runner for the `effchan` studies.
//!
//! Stages run in order `generate`, `channels`, `observers`, `report`; each
//! reads the artifacts of the previous one from the output directory and
//! records what it wrote in `manifest.json`.

pub mod config;
pub mod error;
pub mod figures;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod svg;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use pipeline::Pipeline;
