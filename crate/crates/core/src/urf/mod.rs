//! User response forecasting at the (user, advertiser) level: a
//! factorization machine per response (click, conversion) and the URF log
//! it emits for the sampled requests.

pub mod evaluate;
pub mod features;
pub mod fm;
pub mod train;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use evaluate::{auc, evaluate_urf, logloss};
pub use features::{action_samples, featurize, ActionSample, FmInput, Vocabulary};
pub use fm::UrfModel;
pub use train::{train_urf, TrainTrace, UrfHyper};

use crate::error::{Error, Result};
use crate::synthlog::records::{AuctionRecord, UrfRecord};
use crate::synthlog::world::{Context, World};

pub const PROB_CLAMP: f64 = 1e-6;

pub const URF_SCHEMA_VERSION: u32 = 1;

/// Click and conversion models persisted together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrfBundle {
    pub schema_version: u32,
    pub version: String,
    pub ctr: UrfModel<f64>,
    pub cvr: UrfModel<f64>,
}

impl UrfBundle {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let b: Self = serde_json::from_str(&text)?;
        if b.schema_version != URF_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported URF model schema {}",
                b.schema_version
            )));
        }
        Ok(b)
    }

    /// Clamped (pctr, pcvr) for one context.
    pub fn predict(&self, ctx: &Context, world: &World) -> Result<(f64, f64)> {
        let (fields, dense) = featurize::<f64>(ctx, world)?;
        let clamp = |p: f64| p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        Ok((
            clamp(self.ctr.predict_raw(&fields, &dense)?),
            clamp(self.cvr.predict_raw(&fields, &dense)?),
        ))
    }
}

/// One record per (sampled request, advertiser), in request then advertiser order.
pub fn emit_urf_log(
    models: &UrfBundle,
    world: &World,
    records: &[AuctionRecord<f64>],
    advertisers: &[u32],
) -> Result<Vec<UrfRecord<f64>>> {
    let rows: Vec<Vec<UrfRecord<f64>>> = records
        .par_iter()
        .filter(|r| r.sampled)
        .map(|r| {
            advertisers
                .iter()
                .map(|&a| {
                    let ctx = Context {
                        user_id: r.user_id,
                        advertiser_id: a,
                        hour: r.hour,
                        adzone_id: r.adzone_id,
                    };
                    let (pctr, pcvr) = models.predict(&ctx, world)?;
                    Ok(UrfRecord {
                        request_id: r.request_id,
                        advertiser_id: a,
                        pctr,
                        pcvr,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthlog::world::{gen_world, WorldConfig};

    #[test]
    fn emits_one_record_per_sampled_request_and_advertiser() {
        let w = gen_world(
            &WorldConfig { n_users: 30, n_tags: 3, n_advertisers: 3, ..WorldConfig::default() },
            1,
        )
        .unwrap();
        let vocab = Vocabulary::fit::<f64>(&[]);
        let bundle = UrfBundle {
            schema_version: URF_SCHEMA_VERSION,
            version: "t".into(),
            ctr: UrfModel::zeros(vocab.clone(), 2, 2),
            cvr: UrfModel::zeros(vocab, 2, 2),
        };
        let rec = |id: u64, sampled: bool| AuctionRecord {
            request_id: id,
            user_id: 3,
            hour: 4,
            area_id: 0,
            adzone_id: 1,
            winner: 0,
            b1: 2.0,
            b2: 1.0,
            sampled,
        };
        let recs = vec![rec(1, true), rec(2, false), rec(3, true)];
        let out = emit_urf_log(&bundle, &w, &recs, &[0, 1, 2]).unwrap();
        assert_eq!(out.len(), 6);
        assert!(out.iter().all(|u| u.request_id != 2));
        let ctx = Context { user_id: 3, advertiser_id: 1, hour: 4, adzone_id: 1 };
        assert_eq!(out[1].pctr, bundle.predict(&ctx, &w).unwrap().0);
        assert_eq!(out[1].pctr, 0.5);
    }
}
