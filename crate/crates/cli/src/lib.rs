//! Orchestration of the forecasting pipeline: world and log generation,
//! response models, dataset construction, calibration, evaluation and
//! serving.

pub mod config;
pub mod pipeline;

pub use config::{DatasetConfig, LogsConfig, PipelineConfig};
pub use pipeline::{run_all, Layout};
