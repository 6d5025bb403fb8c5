//! Synthetic world: users with categorical profiles, targeting tags,
//! advertisers, and the latent response model that defines true click and
//! conversion probabilities.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::replay::TargetingOption;

pub const AGE_BANDS: usize = 6;
pub const GENDERS: usize = 2;
pub const DEVICES: usize = 3;
pub const INCOME_BANDS: usize = 5;
pub const HOURS: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub n_users: usize,
    pub n_tags: usize,
    pub n_advertisers: usize,
    pub n_adzones: usize,
    pub n_areas: usize,
    pub n_categories: usize,
    /// Mean fraction of users carried by one tag.
    pub tag_density: f64,
    /// Embedding width of the latent response model.
    pub latent_dim: usize,
    pub base_ctr: f64,
    pub base_cvr: f64,
    /// Standard deviation of first-order latent weights.
    pub linear_scale: f64,
    /// Standard deviation of each latent factor component.
    pub factor_scale: f64,
    /// Mean browse count of a (user, advertiser) pair.
    pub browse_rate: f64,
    /// Purchase probability per browse.
    pub buy_rate: f64,
    /// Log-normal location of the winning eCPM bid.
    pub bid_log_mean: f64,
    pub bid_log_sd: f64,
    /// Log-normal spread of per-user request quality.
    pub quality_log_sd: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_users: 20_000,
            n_tags: 60,
            n_advertisers: 20,
            n_adzones: 6,
            n_areas: 8,
            n_categories: 5,
            tag_density: 0.06,
            latent_dim: 4,
            base_ctr: 0.04,
            base_cvr: 0.08,
            linear_scale: 0.25,
            factor_scale: 0.3,
            browse_rate: 0.6,
            buy_rate: 0.15,
            bid_log_mean: 3.0,
            bid_log_sd: 0.5,
            quality_log_sd: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: u32,
    pub age_band: u8,
    pub gender: u8,
    pub device: u8,
    pub income_band: u8,
    pub home_area: u32,
    /// Multiplier on the bid landscape of this user's requests.
    pub quality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvertiserProfile {
    pub advertiser_id: u32,
    pub category: u8,
    /// Base quality in (0, 1).
    pub quality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tag {
    pub tag_id: u32,
    pub option: TargetingOption,
    /// Sorted, non-empty.
    pub users: Vec<u32>,
}

/// Request context of one (user, advertiser) impression opportunity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Context {
    pub user_id: u32,
    pub advertiser_id: u32,
    pub hour: u8,
    pub adzone_id: u32,
}

/// Categorical field layout shared by the latent model and the URF featurizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Age,
    Gender,
    Device,
    Income,
    Advertiser,
    Category,
    Hour,
    Adzone,
}

impl Field {
    pub const ALL: [Field; 8] = [
        Field::Age,
        Field::Gender,
        Field::Device,
        Field::Income,
        Field::Advertiser,
        Field::Category,
        Field::Hour,
        Field::Adzone,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Field::Age => "age_band",
            Field::Gender => "gender",
            Field::Device => "device",
            Field::Income => "income_band",
            Field::Advertiser => "advertiser_id",
            Field::Category => "category",
            Field::Hour => "hour",
            Field::Adzone => "adzone_id",
        }
    }
}

/// Second-order factorization model over the categorical fields plus
/// log-scaled interaction counts. Its logistic output is the true response
/// probability, so an order-2 FM is the Bayes predictor family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentResponse {
    pub bias: f64,
    /// Offsets of each field in `weights`, in `Field::ALL` order.
    pub offsets: Vec<usize>,
    pub weights: Vec<f64>,
    pub k: usize,
    /// Row-major `weights.len() × k`.
    pub factors: Vec<f64>,
    /// Weights on ln(1 + browse) and ln(1 + buy).
    pub dense: [f64; 2],
}

impl LatentResponse {
    pub fn logit(&self, slots: &[usize; 8], dense: [f64; 2]) -> f64 {
        let mut z = self.bias + self.dense[0] * dense[0] + self.dense[1] * dense[1];
        for (f, &s) in slots.iter().enumerate() {
            z += self.weights[self.offsets[f] + s];
        }
        for d in 0..self.k {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for (f, &s) in slots.iter().enumerate() {
                let v = self.factors[(self.offsets[f] + s) * self.k + d];
                sum += v;
                sq += v * v;
            }
            z += 0.5 * (sum * sum - sq);
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub config: WorldConfig,
    pub seed: u64,
    pub users: Vec<UserProfile>,
    pub tags: Vec<Tag>,
    pub advertisers: Vec<AdvertiserProfile>,
    pub adzones: Vec<u32>,
    pub areas: Vec<u32>,
    /// Relative traffic share per hour of day.
    pub hour_weights: Vec<f64>,
    /// Relative traffic share per adzone; also scales the bid landscape.
    pub adzone_weights: Vec<f64>,
    /// Row-major users × advertisers `[browse, buy]` counts.
    pub interactions: Vec<[u16; 2]>,
    pub ctr_model: LatentResponse,
    pub cvr_model: LatentResponse,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Derives an independent stream seed from a base seed and a label.
pub fn subseed(seed: u64, label: u64) -> u64 {
    let mut x = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Uniform in [0, 1) from a hash of the inputs.
pub fn hash_unit(seed: u64, a: u64, b: u64) -> f64 {
    let h = subseed(subseed(seed, a), b);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn gen_latent(
    rng: &mut ChaCha8Rng,
    cfg: &WorldConfig,
    base_rate: f64,
    field_sizes: &[usize; 8],
    dense: [f64; 2],
) -> LatentResponse {
    let mut offsets = Vec::with_capacity(8);
    let mut total = 0;
    for s in field_sizes {
        offsets.push(total);
        total += s;
    }
    let lin = Normal::new(0.0, cfg.linear_scale).expect("finite scale");
    let fac = Normal::new(0.0, cfg.factor_scale).expect("finite scale");
    let weights: Vec<f64> = (0..total).map(|_| lin.sample(rng)).collect();
    let factors: Vec<f64> = (0..total * cfg.latent_dim).map(|_| fac.sample(rng)).collect();
    LatentResponse {
        bias: logit(base_rate),
        offsets,
        weights,
        k: cfg.latent_dim,
        factors,
        dense,
    }
}

/// Generates a world. Pure function of `(config, seed)`.
pub fn gen_world(config: &WorldConfig, seed: u64) -> Result<World> {
    let cfg = config;
    for (name, n) in [
        ("n_users", cfg.n_users),
        ("n_tags", cfg.n_tags),
        ("n_advertisers", cfg.n_advertisers),
        ("n_adzones", cfg.n_adzones),
        ("n_areas", cfg.n_areas),
        ("n_categories", cfg.n_categories),
        ("latent_dim", cfg.latent_dim),
    ] {
        if n == 0 {
            return Err(Error::Config(format!("{name} must be positive")));
        }
    }
    if !(cfg.base_ctr > 0.0 && cfg.base_ctr < 1.0 && cfg.base_cvr > 0.0 && cfg.base_cvr < 1.0) {
        return Err(Error::Config("base rates must lie in (0, 1)".into()));
    }
    if !(cfg.tag_density > 0.0 && cfg.tag_density <= 1.0) {
        return Err(Error::Config("tag_density must lie in (0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let quality = LogNormal::new(0.0, cfg.quality_log_sd)
        .map_err(|e| Error::Config(format!("quality_log_sd: {e}")))?;
    let users: Vec<UserProfile> = (0..cfg.n_users)
        .map(|u| UserProfile {
            user_id: u as u32,
            age_band: rng.random_range(0..AGE_BANDS) as u8,
            gender: rng.random_range(0..GENDERS) as u8,
            device: rng.random_range(0..DEVICES) as u8,
            income_band: rng.random_range(0..INCOME_BANDS) as u8,
            home_area: rng.random_range(0..cfg.n_areas) as u32,
            quality: quality.sample(&mut rng),
        })
        .collect();

    // Tag sizes vary by an order of magnitude around the configured density.
    let size_spread = LogNormal::new(0.0, 0.6).expect("constant");
    let mut member: Vec<Vec<u32>> = (0..cfg.n_tags)
        .map(|_| {
            let p = (cfg.tag_density * size_spread.sample(&mut rng)).min(1.0);
            (0..cfg.n_users as u32)
                .filter(|_| rng.random::<f64>() < p)
                .collect()
        })
        .collect();
    for users_of in member.iter_mut() {
        if users_of.is_empty() {
            users_of.push(rng.random_range(0..cfg.n_users) as u32);
        }
    }
    let mut covered = vec![false; cfg.n_users];
    for users_of in &member {
        for &u in users_of {
            covered[u as usize] = true;
        }
    }
    for (u, c) in covered.iter().enumerate() {
        if !c {
            let t = rng.random_range(0..cfg.n_tags);
            member[t].push(u as u32);
        }
    }
    let tags: Vec<Tag> = member
        .into_iter()
        .enumerate()
        .map(|(t, mut users)| {
            users.sort_unstable();
            users.dedup();
            Tag {
                tag_id: t as u32,
                option: TargetingOption::ALL[t % TargetingOption::ALL.len()],
                users,
            }
        })
        .collect();

    let advertisers: Vec<AdvertiserProfile> = (0..cfg.n_advertisers)
        .map(|a| AdvertiserProfile {
            advertiser_id: a as u32,
            category: rng.random_range(0..cfg.n_categories) as u8,
            quality: rng.random_range(0.05..0.95),
        })
        .collect();

    let hour_weights: Vec<f64> = (0..HOURS)
        .map(|h| {
            let phase = (h as f64 - 4.0) / 24.0 * std::f64::consts::TAU;
            1.0 - 0.7 * phase.cos()
        })
        .collect();
    let adzone_weights: Vec<f64> = (0..cfg.n_adzones).map(|z| 1.0 / (1.0 + z as f64)).collect();

    let browse = cfg.browse_rate;
    let mut interactions = Vec::with_capacity(cfg.n_users * cfg.n_advertisers);
    for _u in 0..cfg.n_users {
        for a in &advertisers {
            let rate = browse * (0.5 + a.quality);
            let n = if rate > 0.0 {
                Poisson::new(rate).map(|d| d.sample(&mut rng) as u16).unwrap_or(0)
            } else {
                0
            };
            let buys = (0..n).filter(|_| rng.random::<f64>() < cfg.buy_rate).count() as u16;
            interactions.push([n, buys]);
        }
    }

    let sizes = [
        AGE_BANDS,
        GENDERS,
        DEVICES,
        INCOME_BANDS,
        cfg.n_advertisers,
        cfg.n_categories,
        HOURS,
        cfg.n_adzones,
    ];
    let ctr_model = gen_latent(&mut rng, cfg, cfg.base_ctr, &sizes, [0.35, 0.6]);
    let cvr_model = gen_latent(&mut rng, cfg, cfg.base_cvr, &sizes, [0.2, 0.9]);

    Ok(World {
        config: cfg.clone(),
        seed,
        users,
        tags,
        advertisers,
        adzones: (0..cfg.n_adzones as u32).collect(),
        areas: (0..cfg.n_areas as u32).collect(),
        hour_weights,
        adzone_weights,
        interactions,
        ctr_model,
        cvr_model,
    })
}

impl World {
    pub fn user(&self, user_id: u32) -> Option<&UserProfile> {
        self.users.get(user_id as usize)
    }

    pub fn advertiser(&self, advertiser_id: u32) -> Option<&AdvertiserProfile> {
        self.advertisers.get(advertiser_id as usize)
    }

    pub fn interaction(&self, user_id: u32, advertiser_id: u32) -> [u16; 2] {
        let n_adv = self.advertisers.len();
        self.interactions
            .get(user_id as usize * n_adv + advertiser_id as usize)
            .copied()
            .unwrap_or([0, 0])
    }

    /// Category value of each field for a context, in `Field::ALL` order.
    pub fn slots(&self, ctx: &Context) -> Option<[usize; 8]> {
        let u = self.user(ctx.user_id)?;
        let a = self.advertiser(ctx.advertiser_id)?;
        Some([
            u.age_band as usize,
            u.gender as usize,
            u.device as usize,
            u.income_band as usize,
            a.advertiser_id as usize,
            a.category as usize,
            ctx.hour as usize,
            ctx.adzone_id as usize,
        ])
    }

    /// ln(1 + browse), ln(1 + buy) for the pair.
    pub fn dense_features(&self, user_id: u32, advertiser_id: u32) -> [f64; 2] {
        let [b, p] = self.interaction(user_id, advertiser_id);
        [(b as f64).ln_1p(), (p as f64).ln_1p()]
    }

    pub fn true_pctr(&self, ctx: &Context) -> Option<f64> {
        let slots = self.slots(ctx)?;
        let dense = self.dense_features(ctx.user_id, ctx.advertiser_id);
        Some(sigmoid(self.ctr_model.logit(&slots, dense)))
    }

    pub fn true_pcvr(&self, ctx: &Context) -> Option<f64> {
        let slots = self.slots(ctx)?;
        let dense = self.dense_features(ctx.user_id, ctx.advertiser_id);
        Some(sigmoid(self.cvr_model.logit(&slots, dense)))
    }

    pub fn tag(&self, tag_id: u32) -> Option<&Tag> {
        self.tags.get(tag_id as usize)
    }

    pub fn tags_of_option(&self, option: TargetingOption) -> Vec<u32> {
        self.tags
            .iter()
            .filter(|t| t.option == option)
            .map(|t| t.tag_id)
            .collect()
    }

    pub(crate) fn sample_hour(&self, rng: &mut impl Rng) -> u8 {
        weighted_index(&self.hour_weights, rng) as u8
    }

    pub(crate) fn sample_adzone(&self, rng: &mut impl Rng) -> u32 {
        weighted_index(&self.adzone_weights, rng) as u32
    }

    pub(crate) fn random_advertiser(&self, rng: &mut impl Rng) -> u32 {
        self.advertisers
            .choose(rng)
            .map(|a| a.advertiser_id)
            .unwrap_or(0)
    }
}

pub(crate) fn weighted_index(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldConfig {
        WorldConfig {
            n_users: 10,
            n_tags: 3,
            n_advertisers: 2,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn small_world_cardinalities() {
        let w = gen_world(&small(), 7).unwrap();
        assert_eq!(w.users.len(), 10);
        assert_eq!(w.tags.len(), 3);
        assert_eq!(w.advertisers.len(), 2);
        assert!(w.tags.iter().all(|t| !t.users.is_empty()));
        for u in 0..10u32 {
            assert!(w.tags.iter().any(|t| t.users.contains(&u)), "user {u} untagged");
        }
    }

    #[test]
    fn deterministic_for_seed() {
        assert_eq!(gen_world(&small(), 7).unwrap(), gen_world(&small(), 7).unwrap());
        assert_ne!(gen_world(&small(), 7).unwrap(), gen_world(&small(), 8).unwrap());
    }

    #[test]
    fn zero_counts_rejected() {
        for cfg in [
            WorldConfig { n_users: 0, ..small() },
            WorldConfig { n_tags: 0, ..small() },
            WorldConfig { n_advertisers: 0, ..small() },
        ] {
            assert!(matches!(gen_world(&cfg, 1), Err(Error::Config(_))));
        }
    }

    #[test]
    fn true_pctr_recomputes_from_latent_parameters() {
        let cfg = WorldConfig {
            n_users: 1000,
            n_tags: 50,
            n_advertisers: 20,
            ..WorldConfig::default()
        };
        let w = gen_world(&cfg, 1).unwrap();
        let mut total = 0.0;
        let mut n = 0.0;
        for u in 0..1000u32 {
            for a in 0..20u32 {
                let ctx = Context { user_id: u, advertiser_id: a, hour: 12, adzone_id: 0 };
                let p = w.true_pctr(&ctx).unwrap();
                assert!(p > 0.0 && p < 1.0);
                // independent straight-line evaluation of the pairwise definition
                let s = w.slots(&ctx).unwrap();
                let m = &w.ctr_model;
                let idx: Vec<usize> = (0..8).map(|f| m.offsets[f] + s[f]).collect();
                let dense = w.dense_features(u, a);
                let mut z = m.bias + m.dense[0] * dense[0] + m.dense[1] * dense[1];
                z += idx.iter().map(|&i| m.weights[i]).sum::<f64>();
                for i in 0..8 {
                    for j in i + 1..8 {
                        z += (0..m.k)
                            .map(|d| m.factors[idx[i] * m.k + d] * m.factors[idx[j] * m.k + d])
                            .sum::<f64>();
                    }
                }
                assert!((p - sigmoid(z)).abs() < 1e-12);
                total += p;
                n += 1.0;
            }
        }
        let mean = total / n;
        // interactions shift the mean away from the base rate but keep it in band
        assert!(mean > 0.25 * cfg.base_ctr && mean < 4.0 * cfg.base_ctr, "mean pctr {mean}");
    }
}
