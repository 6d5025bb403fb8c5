//! Campaign performance forecasting.
//!
//! Replays the essential match and rank logic of an ad auction over
//! historical logs to estimate a new campaign's impressions, clicks and cost,
//! then calibrates the replay deviation with a multi-gate mixture-of-experts
//! network.

pub mod calibrate;
pub mod error;
pub mod eval;
pub mod optim;
pub mod replay;
pub mod scalar;
pub mod synthlog;
pub mod urf;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type LogIndex32 = replay::LogIndex<f32>;
pub type LogIndex64 = replay::LogIndex<f64>;
pub type Criteria32 = replay::CampaignCriteria<f32>;
pub type Criteria64 = replay::CampaignCriteria<f64>;
pub type Replay32 = replay::ReplayResult<f32>;
pub type Replay64 = replay::ReplayResult<f64>;
pub type Mmoe32 = calibrate::mmoe::MmoeModel<f32>;
pub type Mmoe64 = calibrate::mmoe::MmoeModel<f64>;
pub type Calibrator32 = calibrate::Calibrator<f32>;
pub type Calibrator64 = calibrate::Calibrator<f64>;
