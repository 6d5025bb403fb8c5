//! Offline evaluation: accuracy metrics, the synthetic campaign collection,
//! the method benchmark and the pctr-disturbance sweep.

pub mod benchmark;
pub mod dataset;
pub mod metrics;

pub use dataset::{build_dataset, overlap, sample_criteria, split_dataset, CampaignMix, SamplerConfig, Splits};
pub use metrics::{pearson, pearson_matrix, ratio_p, weighted_mape, Metric};
pub use benchmark::{
    benchmark, disturbance_sweep, label_correlations, pearson_csv, sweep_csv, CampaignForecasts, EvalReport, Group,
    Method, ReportRow, SweepRow, DEFAULT_DISTURBANCES, RATIO_P,
};
