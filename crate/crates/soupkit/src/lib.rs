//! File formats, experiment runner, reports and command-line front end for
//! `soupkit-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
mod container;
pub mod dataset_io;
pub mod error;
pub mod report;
pub mod runner;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::ExperimentConfig;
pub use dataset_io::{load_dataset, save_dataset, DatasetFile};
pub use error::{Error, Result};
pub use runner::{run_experiment, RunManifest};
