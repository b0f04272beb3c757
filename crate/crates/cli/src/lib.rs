//! Experiment pipeline around [`causemm_core`]: configuration, file
//! formats, the four pipeline stages and the run manifest.
//!
//! A run is driven by one TOML file. Every stage derives its seed from the
//! master seed and the stage name, so each stage is reproducible on its own.

pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;

pub use config::{ExperimentConfig, MaskSource, Stage};
pub use error::{CliError, Result};
pub use pipeline::{run_pipeline, RunManifest, RunOptions};
