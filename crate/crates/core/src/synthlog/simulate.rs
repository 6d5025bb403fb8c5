//! Ground-truth delivery: the replay rank semantics plus the platform
//! strategies replay leaves out (parallel retrieval, pctr calibration,
//! budget pacing).

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::records::AuctionRecord;
use super::world::{hash_unit, subseed, Context, World};
use crate::error::{Error, Result};
use crate::replay::matching::match_auctions;
use crate::replay::{
    impression_value, prorate_and_scale, rank, CampaignCriteria, LogIndex, ResponseSource,
    TargetingOption,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyConfig {
    /// Extra audience reached beyond two-stage retrieval, as a fraction of
    /// each targeted tag's size, per targeting option.
    #[serde(default)]
    pub parallel_retrieval_boost: BTreeMap<TargetingOption, f64>,
    /// Multiplicative bias on pctr applied by the live system.
    pub pctr_calibration_shift: f64,
    /// Log-scale noise of per-hour pacing participation.
    pub pacing_jitter: f64,
    pub seed: u64,
}

impl StrategyConfig {
    /// All strategies off: the simulator degenerates to replay.
    pub fn disabled() -> Self {
        Self {
            parallel_retrieval_boost: BTreeMap::new(),
            pctr_calibration_shift: 1.0,
            pacing_jitter: 0.0,
            seed: 0,
        }
    }

    pub fn boost(&self, option: TargetingOption) -> f64 {
        self.parallel_retrieval_boost.get(&option).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .parallel_retrieval_boost
            .values()
            .any(|b| !(b.is_finite() && *b >= 0.0))
        {
            return Err(Error::Config("parallel_retrieval_boost must be >= 0".into()));
        }
        if !(self.pctr_calibration_shift.is_finite() && self.pctr_calibration_shift > 0.0) {
            return Err(Error::Config("pctr_calibration_shift must be > 0".into()));
        }
        if !(self.pacing_jitter.is_finite() && self.pacing_jitter >= 0.0) {
            return Err(Error::Config("pacing_jitter must be >= 0".into()));
        }
        Ok(())
    }
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            parallel_retrieval_boost: [
                (TargetingOption::Demographic, 0.05),
                (TargetingOption::Interest, 0.6),
                (TargetingOption::Behavior, 0.3),
                (TargetingOption::Lookalike, 1.5),
                (TargetingOption::Keyword, 0.0),
            ]
            .into_iter()
            .collect(),
            pctr_calibration_shift: 0.7,
            pacing_jitter: 0.8,
            seed: 17,
        }
    }
}

/// Observed performance of a campaign.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TruePerformance {
    pub impression: f64,
    pub click: f64,
    pub cost: f64,
}

impl TruePerformance {
    pub fn as_array(&self) -> [f64; 3] {
        [self.impression, self.click, self.cost]
    }
}

/// True response probabilities of the world, looked up per record.
pub struct WorldResponses<'a> {
    pub world: &'a World,
}

impl ResponseSource<f64> for WorldResponses<'_> {
    fn responses(&self, _: usize, r: &AuctionRecord<f64>, advertiser: u32) -> Option<(f64, f64)> {
        let ctx = Context {
            user_id: r.user_id,
            advertiser_id: advertiser,
            hour: r.hour,
            adzone_id: r.adzone_id,
        };
        Some((self.world.true_pctr(&ctx)?, self.world.true_pcvr(&ctx)?))
    }
}

/// Simulator bound to a full-log index, a response source and a strategy.
pub struct TrueDelivery<'a, S: ?Sized> {
    index: &'a LogIndex<f64>,
    responses: &'a S,
    strategy: StrategyConfig,
    expansion: HashMap<u32, Vec<u32>>,
}

impl<'a, S: ResponseSource<f64> + ?Sized> TrueDelivery<'a, S> {
    pub fn new(
        world: &World,
        index: &'a LogIndex<f64>,
        responses: &'a S,
        strategy: StrategyConfig,
    ) -> Result<Self> {
        strategy.validate()?;
        let n_users = world.users.len() as u32;
        let expansion = world
            .tags
            .iter()
            .filter_map(|tag| {
                let extra = (strategy.boost(tag.option) * tag.users.len() as f64).round() as usize;
                if extra == 0 {
                    return None;
                }
                let mut outside: Vec<(f64, u32)> = (0..n_users)
                    .filter(|u| tag.users.binary_search(u).is_err())
                    .map(|u| (hash_unit(strategy.seed, tag.tag_id as u64, u as u64), u))
                    .collect();
                outside.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let mut users: Vec<u32> = outside.into_iter().take(extra).map(|(_, u)| u).collect();
                users.sort_unstable();
                Some((tag.tag_id, users))
            })
            .collect();
        Ok(Self {
            index,
            responses,
            strategy,
            expansion,
        })
    }

    pub fn strategy(&self) -> &StrategyConfig {
        &self.strategy
    }

    /// Users reached by parallel retrieval on top of the tag union.
    pub fn extra_users(&self, criteria: &CampaignCriteria<f64>) -> Vec<u32> {
        let mut extra: Vec<u32> = criteria
            .targeting_tags
            .iter()
            .filter_map(|t| self.expansion.get(t))
            .flatten()
            .copied()
            .collect();
        extra.sort_unstable();
        extra.dedup();
        extra
    }

    /// Participation probability of each hour under pacing noise.
    pub fn pacing(&self, seed: u64) -> [f64; 24] {
        let mut q = [1.0; 24];
        if self.strategy.pacing_jitter > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(subseed(self.strategy.seed, seed));
            for qh in q.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *qh = (self.strategy.pacing_jitter * z).exp().min(1.0);
            }
        }
        q
    }

    pub fn simulate(&self, criteria: &CampaignCriteria<f64>, seed: u64) -> Result<TruePerformance> {
        criteria.validate()?;
        let extra = self.extra_users(criteria);
        let mut matched = match_auctions(criteria, self.index, self.responses, &extra)?;

        let shift = self.strategy.pctr_calibration_shift;
        if shift != 1.0 {
            for m in matched.iter_mut() {
                m.pctr = (m.pctr * shift).min(1.0 - 1e-6);
                m.v = impression_value(criteria.objective, m.pctr, m.pcvr);
            }
        }
        if self.strategy.pacing_jitter > 0.0 {
            let q = self.pacing(seed);
            let stream = subseed(self.strategy.seed, seed);
            matched.retain(|m| hash_unit(stream, m.request_id, 1) < q[m.hour as usize]);
        }

        let s = self.index.scale_factor();
        let budget = criteria.budget / s;
        let d = prorate_and_scale(rank(&matched, criteria, budget)?, budget, s);
        Ok(TruePerformance {
            impression: d.impression,
            click: d.click,
            cost: d.cost,
        })
    }
}

/// One-shot convenience over [`TrueDelivery`].
pub fn simulate_true_delivery<S: ResponseSource<f64> + ?Sized>(
    criteria: &CampaignCriteria<f64>,
    world: &World,
    full_index: &LogIndex<f64>,
    responses: &S,
    strategy: &StrategyConfig,
    seed: u64,
) -> Result<TruePerformance> {
    TrueDelivery::new(world, full_index, responses, strategy.clone())?.simulate(criteria, seed)
}
