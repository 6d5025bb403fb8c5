//! Immutable serving state and its loader.

use std::path::PathBuf;

use cpf_core::calibrate::{CalibratedForecast, Calibrator, CalibratorFile};
use cpf_core::replay::{replay, CampaignCriteria, LogIndex, ReplayResult};
use cpf_core::synthlog::io::{AUCTION_LOG, URF_LOG, UTS_LOG, WORLD_FILE};
use cpf_core::synthlog::{read_logs, AuctionRecord, LogManifest, UrfRecord, UtsRecord, World};
use cpf_core::urf::{emit_urf_log, UrfBundle};

use crate::ServiceError;

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub logs_dir: PathBuf,
    pub model: PathBuf,
    pub urf_model: Option<PathBuf>,
    pub scale_factor: Option<f64>,
}

/// Everything one request reads. Never mutated after construction.
#[derive(Debug)]
pub struct Snapshot {
    pub index: LogIndex<f64>,
    pub calibrator: Calibrator<f64>,
    pub model_version: String,
    pub log_date: String,
}

impl Snapshot {
    pub fn new(index: LogIndex<f64>, calibrator: Calibrator<f64>, model_version: String, log_date: String) -> Self {
        Self { index, calibrator, model_version, log_date }
    }

    pub fn load(opts: &LoadOptions) -> Result<Self, ServiceError> {
        let dir = &opts.logs_dir;
        let manifest = LogManifest::load(dir)?;
        let scale = opts
            .scale_factor
            .or(manifest.as_ref().map(|m| m.scale_factor))
            .ok_or_else(|| ServiceError::Missing("scale factor (no manifest.json and no --scale-factor)".into()))?;
        let log_date = manifest.map_or_else(|| "unknown".to_string(), |m| m.log_date);

        let auctions: Vec<AuctionRecord<f64>> = read_logs(dir.join(AUCTION_LOG))?;
        let uts: Vec<UtsRecord> = read_logs(dir.join(UTS_LOG))?;
        let urf_path = dir.join(URF_LOG);
        let urf: Vec<UrfRecord<f64>> = if urf_path.exists() {
            read_logs(&urf_path)?
        } else {
            let model_path = opts
                .urf_model
                .as_ref()
                .ok_or_else(|| ServiceError::Missing(format!("{} and no --urf-model", urf_path.display())))?;
            let world_path = dir.join(WORLD_FILE);
            let text = std::fs::read_to_string(&world_path)
                .map_err(|e| ServiceError::Core(cpf_core::Error::io(&world_path, e)))?;
            let world: World = serde_json::from_str(&text).map_err(cpf_core::Error::from)?;
            let models = UrfBundle::load(model_path)?;
            let advertisers: Vec<u32> = world.advertisers.iter().map(|a| a.advertiser_id).collect();
            emit_urf_log(&models, &world, &auctions, &advertisers)?
        };
        let index = LogIndex::build(auctions, &uts, true, scale)?.with_urf(&urf)?;
        let file = CalibratorFile::<f64>::load(&opts.model)?;
        Ok(Self::new(index, file.calibrator, file.version, log_date))
    }

    pub fn record_count(&self) -> usize {
        self.index.len()
    }

    pub fn forecast(
        &self,
        criteria: &CampaignCriteria<f64>,
    ) -> cpf_core::Result<(CalibratedForecast<f64>, ReplayResult<f64>)> {
        let raw = replay(criteria, &self.index)?;
        let calibrated = self.calibrator.forecast(criteria, &raw)?;
        Ok((calibrated, raw))
    }
}
