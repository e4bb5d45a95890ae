//! Dataset files, configuration and experiment orchestration.

pub mod blob;
mod config;
pub mod dataset;
mod experiment;

pub use config::{ArchConfig, ExperimentConfig, SplitSpec, TrainSettings};
pub use dataset::{gen_dataset, split_dataset, Dataset, DatasetSummary, GroupData, Split, SplitName};
pub use experiment::{
    build_samples, condition_name, open_or_generate, run_experiment, ExperimentName, ExperimentReport, Init, Lab,
    Trained,
};
