//! Experiment harness: configuration, presets, run directories with
//! manifests, the stability sweep and plot scripts.

pub mod config;
pub mod manifest;
pub mod plots;
pub mod presets;
pub mod run;
pub mod stability;

pub use config::{ExperimentConfig, ExperimentKind};
pub use manifest::{RunManifest, RunWriter};
pub use plots::emit_plots;
pub use run::run_experiment;
