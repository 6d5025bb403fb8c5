//! Replay-deviation calibration.
//!
//! A multi-task network maps the campaign criteria and the replay outputs
//! to calibrated impression, click and cost forecasts.

pub mod input;
pub mod mmoe;
pub mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use input::{build_calib_input, CalibInput, FeatureStats, INPUT_DIM};
pub use mmoe::{gradient_check, Activation, GradCheck, MmoeConfig, MmoeModel};
pub use train::{train_mmoe, MmoeHyper, TrainReport};

use crate::error::{Error, Result};
use crate::replay::{BiddingType, CampaignCriteria, ReplayResult};
use crate::scalar::Scalar;
use crate::synthlog::records::CheckRecord;
use crate::synthlog::TruePerformance;

pub const CALIBRATOR_SCHEMA_VERSION: u32 = 1;

/// Forecast target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Indicator {
    Impression,
    Click,
    Cost,
}

impl Indicator {
    pub const ALL: [Indicator; 3] = [Indicator::Impression, Indicator::Click, Indicator::Cost];

    pub fn as_str(self) -> &'static str {
        match self {
            Indicator::Impression => "impression",
            Indicator::Click => "click",
            Indicator::Cost => "cost",
        }
    }

    pub fn of(self, p: &TruePerformance) -> f64 {
        match self {
            Indicator::Impression => p.impression,
            Indicator::Click => p.click,
            Indicator::Cost => p.cost,
        }
    }

    pub fn of_replay<T: Scalar>(self, r: &ReplayResult<T>) -> T {
        match self {
            Indicator::Impression => r.impression,
            Indicator::Click => r.click,
            Indicator::Cost => r.cost,
        }
    }
}

/// One campaign of the calibration dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CalibrationSample<T = f64> {
    pub campaign_id: u64,
    pub criteria: CampaignCriteria<T>,
    pub replay: ReplayResult<T>,
    pub truth: TruePerformance,
}

impl<T: Scalar> CheckRecord for CalibrationSample<T> {
    fn check(&self) -> std::result::Result<(), String> {
        self.criteria.validate().map_err(|e| e.to_string())?;
        let t = self.truth.as_array();
        if t.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(format!("labels must be finite and non-negative, got {t:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CalibratedForecast<T = f64> {
    pub impression: T,
    pub click: T,
    pub cost: T,
}

impl<T: Scalar> CalibratedForecast<T> {
    pub fn get(&self, i: Indicator) -> T {
        match i {
            Indicator::Impression => self.impression,
            Indicator::Click => self.click,
            Indicator::Cost => self.cost,
        }
    }

    fn set(&mut self, i: Indicator, v: T) {
        match i {
            Indicator::Impression => self.impression = v,
            Indicator::Click => self.click = v,
            Indicator::Cost => self.cost = v,
        }
    }
}

/// Either one network for all indicators or one per indicator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
pub enum Calibrator<T = f64> {
    Multi(MmoeModel<T>),
    Single(Vec<(Indicator, MmoeModel<T>)>),
}

impl<T: Scalar> Calibrator<T> {
    pub fn validate(&self) -> Result<()> {
        match self {
            Calibrator::Multi(m) => {
                m.validate()?;
                if m.n_tasks() != Indicator::ALL.len() {
                    return Err(Error::Config("multi-task calibrator needs three towers".into()));
                }
            }
            Calibrator::Single(ms) => {
                for ind in Indicator::ALL {
                    let n = ms.iter().filter(|(i, _)| *i == ind).count();
                    if n != 1 {
                        return Err(Error::Config(format!("need exactly one {} model", ind.as_str())));
                    }
                }
                for (_, m) in ms {
                    m.validate()?;
                    if m.n_tasks() != 1 {
                        return Err(Error::Config("single-task model has several towers".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Calibrated forecasts for a batch of campaigns.
    ///
    /// BCB campaigns spend their whole budget whenever they can, so their
    /// cost forecast is the replay cost capped by budget rather than a
    /// network output.
    pub fn forecast_batch(&self, items: &[(&CampaignCriteria<T>, &ReplayResult<T>)]) -> Result<Vec<CalibratedForecast<T>>> {
        let mut out = vec![CalibratedForecast::default(); items.len()];
        let mut run = |model: &MmoeModel<T>, tasks: &[Indicator]| -> Result<()> {
            let mut x = Vec::with_capacity(items.len() * model.config.input_dim);
            for (c, r) in items {
                x.extend(build_calib_input(c, r, &model.stats)?.to_vec());
            }
            let pred = model.predict(&x, items.len())?;
            for (f, row) in out.iter_mut().zip(pred) {
                for (t, v) in tasks.iter().zip(row) {
                    f.set(*t, v);
                }
            }
            Ok(())
        };
        match self {
            Calibrator::Multi(m) => run(m, &Indicator::ALL)?,
            Calibrator::Single(ms) => {
                for (ind, m) in ms {
                    run(m, &[*ind])?;
                }
            }
        }
        for (f, (c, r)) in out.iter_mut().zip(items) {
            if c.bidding_type == BiddingType::Bcb {
                f.cost = r.cost.min(c.budget);
            }
        }
        Ok(out)
    }

    pub fn forecast(&self, criteria: &CampaignCriteria<T>, replay: &ReplayResult<T>) -> Result<CalibratedForecast<T>> {
        Ok(self.forecast_batch(&[(criteria, replay)])?.remove(0))
    }
}

/// Trains the multi-task calibrator over all three indicators.
pub fn train_mtl_n<T: Scalar>(
    train: &[CalibrationSample<T>],
    valid: &[CalibrationSample<T>],
    hyper: &MmoeHyper,
) -> Result<(Calibrator<T>, Vec<TrainReport>)> {
    let (m, r) = train_mmoe(train, valid, &Indicator::ALL, hyper)?;
    Ok((Calibrator::Multi(m), vec![r]))
}

/// Trains one single-tower network per indicator.
pub fn train_mtl_1<T: Scalar>(
    train: &[CalibrationSample<T>],
    valid: &[CalibrationSample<T>],
    hyper: &MmoeHyper,
) -> Result<(Calibrator<T>, Vec<TrainReport>)> {
    let mut models = Vec::new();
    let mut reports = Vec::new();
    for ind in Indicator::ALL {
        let (m, r) = train_mmoe(train, valid, &[ind], hyper)?;
        models.push((ind, m));
        reports.push(r);
    }
    Ok((Calibrator::Single(models), reports))
}

/// Versioned calibrator model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratorFile<T = f64> {
    pub schema_version: u32,
    pub version: String,
    pub calibrator: Calibrator<T>,
}

impl<T: Scalar> CalibratorFile<T> {
    pub fn new(version: impl Into<String>, calibrator: Calibrator<T>) -> Self {
        Self { schema_version: CALIBRATOR_SCHEMA_VERSION, version: version.into(), calibrator }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_vec(self)?;
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: Self = serde_json::from_slice(&body)?;
        if file.schema_version != CALIBRATOR_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "calibrator schema version {} unsupported (expected {})",
                file.schema_version, CALIBRATOR_SCHEMA_VERSION
            )));
        }
        file.calibrator.validate()?;
        Ok(file)
    }
}


#[cfg(test)]
mod tests {
    use super::testkit::synthetic_samples;
    use super::*;

    fn tiny_hyper() -> MmoeHyper {
        MmoeHyper {
            config: MmoeConfig { expert_dim: 8, tower_hidden: Some(4), n_experts: 2, ..MmoeConfig::default() },
            batch_size: 32,
            max_epochs: 3,
            ..MmoeHyper::default()
        }
    }

    #[test]
    fn bcb_cost_is_replay_cost_capped_by_budget() {
        let s = synthetic_samples(64, 1, |r| [r.impression, r.click, r.cost]);
        let (cal, _) = train_mtl_n(&s, &s, &tiny_hyper()).unwrap();
        for x in s.iter().filter(|x| x.criteria.bidding_type == BiddingType::Bcb) {
            let f = cal.forecast(&x.criteria, &x.replay).unwrap();
            assert_eq!(f.cost, x.replay.cost.min(x.criteria.budget));
            let mut tight = x.criteria.clone();
            tight.budget = x.replay.cost / 2.0;
            assert_eq!(cal.forecast(&tight, &x.replay).unwrap().cost, tight.budget);
        }
    }

    #[test]
    fn forecasts_are_non_negative_and_batch_matches_single() {
        let s = synthetic_samples(64, 2, |r| [r.impression, r.click, r.cost]);
        let (cal, _) = train_mtl_1(&s, &s, &tiny_hyper()).unwrap();
        cal.validate().unwrap();
        let items: Vec<_> = s.iter().map(|x| (&x.criteria, &x.replay)).collect();
        let batch = cal.forecast_batch(&items).unwrap();
        for (b, x) in batch.iter().zip(&s) {
            assert!(b.impression >= 0.0 && b.click >= 0.0 && b.cost >= 0.0);
            let one = cal.forecast(&x.criteria, &x.replay).unwrap();
            for ind in Indicator::ALL {
                assert!((one.get(ind) - b.get(ind)).abs() <= 1e-9 * b.get(ind).max(1.0));
            }
        }
    }

    #[test]
    fn model_file_round_trips_and_rejects_other_schema() {
        let s = synthetic_samples(64, 3, |r| [r.impression, r.click, r.cost]);
        let (cal, _) = train_mtl_n(&s, &s, &tiny_hyper()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("calibrator.json");
        CalibratorFile::new("v1", cal.clone()).save(&path).unwrap();
        let back = CalibratorFile::<f64>::load(&path).unwrap();
        assert_eq!(back.version, "v1");
        let f1 = cal.forecast(&s[0].criteria, &s[0].replay).unwrap();
        let f2 = back.calibrator.forecast(&s[0].criteria, &s[0].replay).unwrap();
        assert_eq!(f1, f2);
        let mut other = back.clone();
        other.schema_version = 99;
        other.save(&path).unwrap();
        assert!(matches!(CalibratorFile::<f64>::load(&path), Err(Error::Config(_))));
    }
}
