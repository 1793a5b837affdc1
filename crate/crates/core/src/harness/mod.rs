//! Experiment plumbing: tensor files, configs, synthetic data, pipelines.

pub mod config;
pub mod gradsuite;
pub mod run;
pub mod synth;
pub mod tensor_file;

pub use config::{DatasetSpec, ExperimentConfig, StreamSpec, Task, TrainingSpec};
pub use run::{run, stable_part, RunOutcome};
pub use tensor_file::{read_tensor, write_tensor};
