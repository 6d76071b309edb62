//! Operational surface: experiment configs, presets, dataset files,
//! checkpoints, run directories and the command runner.

pub mod checkpoint;
pub mod config;
pub mod ingest;
pub mod presets;
pub mod report;
pub mod run;

pub use config::{resolve, DatasetRef, ExperimentConfig};
pub use ingest::{export, ingest, load_manifest, DatasetManifest, Format};
pub use run::{run, Command, RunOptions, RunOutcome};
