//! Synthetic campaign collection: random criteria, their replay over the
//! down-sampled log and their true delivery over the full log.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::CalibrationSample;
use crate::error::{Error, Result};
use crate::replay::{replay, BiddingType, CampaignCriteria, LogIndex, Objective, ResponseSource, TargetingOption};
use crate::scalar::Scalar;
use crate::synthlog::{subseed, TrueDelivery, World};

/// Relative frequency of each bidding type among sampled campaigns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignMix {
    pub cpm: f64,
    pub cpc: f64,
    pub cpa: f64,
    pub bcb: f64,
    pub mcb: f64,
}

impl Default for CampaignMix {
    /// CPM, CPC and BCB follow the 6899 / 71298 / 23313 split of the
    /// production collection; CPA and MCB are added at a few percent.
    fn default() -> Self {
        Self {
            cpm: 6899.0,
            cpc: 71298.0,
            cpa: 3000.0,
            bcb: 23313.0,
            mcb: 3000.0,
        }
    }
}

impl CampaignMix {
    fn weights(&self) -> [(BiddingType, f64); 5] {
        [
            (BiddingType::Cpm, self.cpm),
            (BiddingType::Cpc, self.cpc),
            (BiddingType::Cpa, self.cpa),
            (BiddingType::Bcb, self.bcb),
            (BiddingType::Mcb, self.mcb),
        ]
    }

    fn validate(&self) -> Result<()> {
        let w = self.weights();
        if w.iter().any(|(_, x)| !(x.is_finite() && *x >= 0.0)) || w.iter().all(|(_, x)| *x == 0.0) {
            return Err(Error::Config("campaign mix weights must be >= 0 and not all zero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub mix: CampaignMix,
    /// Budget is log-uniform on this range.
    pub budget_range: (f64, f64),
    /// Log-normal target eCPM from which manual bid prices are derived.
    pub bid_ecpm_log_mean: f64,
    pub bid_ecpm_log_sd: f64,
    /// MCB unit-cost constraint as a multiple of the typical eCPM per value unit.
    pub constraint_range: (f64, f64),
    pub max_tags: usize,
    /// Probability that each of hours, areas and adzones is left unrestricted.
    pub p_unrestricted: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            mix: CampaignMix::default(),
            budget_range: (2.0, 200.0),
            bid_ecpm_log_mean: 3.0,
            bid_ecpm_log_sd: 0.5,
            constraint_range: (0.5, 2.5),
            max_tags: 3,
            p_unrestricted: 0.5,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        self.mix.validate()?;
        let (lo, hi) = self.budget_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config("budget_range must satisfy 0 < lo <= hi".into()));
        }
        let (lo, hi) = self.constraint_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config("constraint_range must satisfy 0 < lo <= hi".into()));
        }
        if self.max_tags == 0 || !(self.bid_ecpm_log_sd >= 0.0) || !(0.0..=1.0).contains(&self.p_unrestricted) {
            return Err(Error::Config("invalid sampler settings".into()));
        }
        Ok(())
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi == lo {
        return lo;
    }
    rng.random_range(lo.ln()..hi.ln()).exp()
}

fn subset<T: Copy + Ord>(rng: &mut ChaCha8Rng, all: &[T], p_all: f64) -> BTreeSet<T> {
    if rng.random::<f64>() < p_all || all.len() == 1 {
        return all.iter().copied().collect();
    }
    let k = rng.random_range(1..all.len());
    all.choose_multiple(rng, k).copied().collect()
}

/// Draws one random campaign against the world's catalogue.
pub fn sample_criteria(world: &World, cfg: &SamplerConfig, rng: &mut ChaCha8Rng) -> Result<CampaignCriteria<f64>> {
    let options: Vec<TargetingOption> = TargetingOption::ALL
        .into_iter()
        .filter(|o| !world.tags_of_option(*o).is_empty())
        .collect();
    let option = *options
        .choose(rng)
        .ok_or_else(|| Error::Config("world has no tags".into()))?;
    let tags = world.tags_of_option(option);
    let n_tags = rng.random_range(1..=cfg.max_tags.min(tags.len()));
    let targeting_tags = tags.choose_multiple(rng, n_tags).copied().collect();

    let hours = if rng.random::<f64>() < cfg.p_unrestricted {
        (0..24).collect()
    } else {
        let len = rng.random_range(6..24u8);
        let start = rng.random_range(0..24u8);
        (0..len).map(|i| (start + i) % 24).collect()
    };
    let areas = subset(rng, &world.areas, cfg.p_unrestricted);
    let adzones = subset(rng, &world.adzones, cfg.p_unrestricted);
    let advertiser_id = world
        .advertisers
        .choose(rng)
        .ok_or_else(|| Error::Config("world has no advertisers".into()))?
        .advertiser_id;

    let weights = cfg.mix.weights();
    let bidding_type = weights
        .choose_weighted(rng, |w| w.1)
        .map_err(|e| Error::Config(format!("campaign mix: {e}")))?
        .0;
    let objective = match bidding_type {
        BiddingType::Cpm => Objective::Impression,
        BiddingType::Cpc => Objective::Click,
        BiddingType::Cpa => Objective::Conversion,
        BiddingType::Bcb => *[Objective::Impression, Objective::Click, Objective::Click].choose(rng).unwrap(),
        BiddingType::Mcb => *[Objective::Click, Objective::Click, Objective::Conversion].choose(rng).unwrap(),
    };

    let (ctr, cvr) = (world.config.base_ctr, world.config.base_cvr);
    let ecpm = LogNormal::new(cfg.bid_ecpm_log_mean, cfg.bid_ecpm_log_sd)
        .map_err(|e| Error::Config(format!("bid distribution: {e}")))?
        .sample(rng);
    let bidprice = match bidding_type {
        BiddingType::Cpm => Some(ecpm),
        BiddingType::Cpc => Some(ecpm / (1000.0 * ctr)),
        BiddingType::Cpa => Some(ecpm / (1000.0 * ctr * cvr)),
        _ => None,
    };
    let constraint = (bidding_type == BiddingType::Mcb).then(|| {
        let per_value = match objective {
            Objective::Impression => 1.0,
            Objective::Click => ctr,
            Objective::Conversion => ctr * cvr,
        };
        log_uniform(rng, cfg.constraint_range) * cfg.bid_ecpm_log_mean.exp() / per_value
    });

    let c = CampaignCriteria {
        advertiser_id,
        hours,
        areas,
        adzones,
        targeting_option: option,
        targeting_tags,
        objective,
        budget: log_uniform(rng, cfg.budget_range),
        bidding_type,
        bidprice,
        constraint,
    };
    c.validate()?;
    Ok(c)
}

/// Samples `n` campaigns, replays each over `replay_index` and simulates its
/// true delivery. Campaign `i` uses its own seed stream, so the output is
/// independent of thread scheduling.
pub fn build_dataset<S: ResponseSource<f64> + ?Sized + Sync>(
    world: &World,
    replay_index: &LogIndex<f64>,
    truth: &TrueDelivery<'_, S>,
    n: usize,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<Vec<CalibrationSample<f64>>> {
    cfg.validate()?;
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(subseed(seed, i));
            let criteria = sample_criteria(world, cfg, &mut rng)?;
            let r = replay(&criteria, replay_index)?;
            let t = truth.simulate(&criteria, subseed(seed ^ 0x7275_7468, i))?;
            Ok(CalibrationSample {
                campaign_id: i,
                criteria,
                replay: r,
                truth: t,
            })
        })
        .collect()
}

/// Campaign-level partition into train, validation and evaluation sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Splits<T = f64> {
    pub train: Vec<CalibrationSample<T>>,
    pub valid: Vec<CalibrationSample<T>>,
    pub eval: Vec<CalibrationSample<T>>,
}

/// Shuffles with `seed`, then cuts off `n_eval` and `n_valid` campaigns.
pub fn split_dataset<T: Scalar>(
    mut samples: Vec<CalibrationSample<T>>,
    n_valid: usize,
    n_eval: usize,
    seed: u64,
) -> Result<Splits<T>> {
    if n_valid + n_eval >= samples.len() {
        return Err(Error::InsufficientData(format!(
            "{} campaigns cannot hold {n_valid} validation and {n_eval} evaluation campaigns plus training",
            samples.len()
        )));
    }
    samples.sort_by_key(|s| s.campaign_id);
    samples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let eval = samples.split_off(samples.len() - n_eval);
    let valid = samples.split_off(samples.len() - n_valid);
    Ok(Splits { train: samples, valid, eval })
}

/// Number of campaign ids shared between two sample sets.
pub fn overlap<T>(a: &[CalibrationSample<T>], b: &[CalibrationSample<T>]) -> usize {
    let ids: BTreeSet<u64> = a.iter().map(|s| s.campaign_id).collect();
    b.iter().filter(|s| ids.contains(&s.campaign_id)).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthlog::{gen_day_logs, gen_world, StrategyConfig, WorldConfig, WorldResponses};

    fn small_world() -> World {
        gen_world(
            &WorldConfig { n_users: 800, n_tags: 15, n_advertisers: 5, ..WorldConfig::default() },
            3,
        )
        .unwrap()
    }

    #[test]
    fn sampled_criteria_are_valid_and_follow_the_mix() {
        let w = small_world();
        let cfg = SamplerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 5];
        let n = 4000;
        for _ in 0..n {
            let c = sample_criteria(&w, &cfg, &mut rng).unwrap();
            c.validate().unwrap();
            assert!(c.targeting_tags.iter().all(|t| w.tag(*t).unwrap().option == c.targeting_option));
            counts[c.bidding_type.index()] += 1;
        }
        let total: f64 = cfg.mix.weights().iter().map(|w| w.1).sum();
        for (bt, wt) in cfg.mix.weights() {
            let p = wt / total;
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            let got = counts[bt.index()] as f64 / n as f64;
            assert!((got - p).abs() < 5.0 * sd, "{bt:?}: {got} vs {p}");
        }
    }

    #[test]
    fn dataset_is_deterministic_and_splits_are_disjoint() {
        let w = small_world();
        let (auctions, uts) = gen_day_logs(&w, 20_000, 4.0, 5).unwrap();
        let full = LogIndex::build(auctions.clone(), &uts, false, 1.0).unwrap();
        let responses = WorldResponses { world: &w };
        let advertisers: Vec<u32> = w.advertisers.iter().map(|a| a.advertiser_id).collect();
        let sampled = LogIndex::build(auctions, &uts, true, 4.0).unwrap();
        let urf = true_urf(&sampled, &responses, &advertisers);
        let sampled = sampled.with_urf(&urf).unwrap();
        let truth = TrueDelivery::new(&w, &full, &responses, StrategyConfig::default()).unwrap();
        let cfg = SamplerConfig::default();
        let a = build_dataset(&w, &sampled, &truth, 60, &cfg, 9).unwrap();
        let b = build_dataset(&w, &sampled, &truth, 60, &cfg, 9).unwrap();
        assert_eq!(a, b);
        for s in &a {
            assert!(s.replay.cost <= s.criteria.budget + 1e-9);
            assert!(s.truth.cost <= s.criteria.budget + 1e-9);
        }
        let sp = split_dataset(a, 10, 15, 2).unwrap();
        assert_eq!((sp.train.len(), sp.valid.len(), sp.eval.len()), (35, 10, 15));
        assert_eq!(overlap(&sp.train, &sp.eval), 0);
        assert_eq!(overlap(&sp.valid, &sp.eval), 0);
        assert_eq!(overlap(&sp.train, &sp.train), 35);
        assert!(split_dataset(b, 30, 30, 2).is_err());
    }

    fn true_urf(
        index: &LogIndex<f64>,
        responses: &WorldResponses<'_>,
        advertisers: &[u32],
    ) -> Vec<crate::synthlog::UrfRecord<f64>> {
        let mut out = Vec::new();
        for (i, r) in index.records().iter().enumerate() {
            for &a in advertisers {
                let (pctr, pcvr) = responses.responses(i, r, a).unwrap();
                out.push(crate::synthlog::UrfRecord { request_id: r.request_id, advertiser_id: a, pctr, pcvr });
            }
        }
        out
    }
}
