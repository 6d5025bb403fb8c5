use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use super::records::{ActionRecord, AuctionRecord, UtsRecord};
use super::world::{Context, World};
use crate::error::{Error, Result};

/// The user-tag-service relation of a world as (tag, user) edges.
pub fn uts_records(world: &World) -> Vec<UtsRecord> {
    world
        .tags
        .iter()
        .flat_map(|t| {
            t.users.iter().map(move |&u| UtsRecord {
                tag_id: t.tag_id,
                user_id: u,
            })
        })
        .collect()
}

/// One day of auctions. Each request enters the down-sampling bucket
/// independently with probability `1 / scale`.
pub fn gen_day_logs(
    world: &World,
    n_requests: usize,
    scale: f64,
    seed: u64,
) -> Result<(Vec<AuctionRecord>, Vec<UtsRecord>)> {
    if world.users.is_empty() || world.advertisers.is_empty() {
        return Err(Error::Config("world has no users or advertisers".into()));
    }
    if n_requests == 0 {
        return Err(Error::Config("n_requests must be positive".into()));
    }
    if !(scale.is_finite() && scale >= 1.0) {
        return Err(Error::Config(format!("scale factor must be >= 1, got {scale}")));
    }
    let cfg = &world.config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let landscape = LogNormal::new(cfg.bid_log_mean, cfg.bid_log_sd)
        .map_err(|e| Error::Config(format!("bid landscape: {e}")))?;
    let keep = 1.0 / scale;
    let records = (0..n_requests)
        .map(|i| {
            let user = &world.users[rng.random_range(0..world.users.len())];
            let hour = world.sample_hour(&mut rng);
            // most traffic comes from the user's home area
            let area_id = if rng.random::<f64>() < 0.8 {
                user.home_area
            } else {
                world.areas[rng.random_range(0..world.areas.len())]
            };
            let adzone_id = world.sample_adzone(&mut rng);
            let zone_lift = 0.6 + 0.8 * world.adzone_weights[adzone_id as usize];
            let hour_lift = 0.7 + 0.3 * world.hour_weights[hour as usize];
            let b1 = user.quality * zone_lift * hour_lift * landscape.sample(&mut rng);
            let b2 = b1 * rng.random_range(0.4..1.0);
            AuctionRecord {
                request_id: i as u64,
                user_id: user.user_id,
                hour,
                area_id,
                adzone_id,
                winner: world.random_advertiser(&mut rng),
                b1,
                b2,
                sampled: keep >= 1.0 || rng.random::<f64>() < keep,
            }
        })
        .collect();
    Ok((records, uts_records(world)))
}

/// Impressions shown to users with realized clicks and conversions drawn
/// from the latent true probabilities.
pub fn gen_action_log(world: &World, n: usize, seed: u64) -> Result<Vec<ActionRecord>> {
    if world.users.is_empty() || world.advertisers.is_empty() {
        return Err(Error::Config("world has no users or advertisers".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let ctx = Context {
                user_id: rng.random_range(0..world.users.len()) as u32,
                advertiser_id: world.random_advertiser(&mut rng),
                hour: world.sample_hour(&mut rng),
                adzone_id: world.sample_adzone(&mut rng),
            };
            let pctr = world.true_pctr(&ctx).unwrap_or(0.0);
            let pcvr = world.true_pcvr(&ctx).unwrap_or(0.0);
            ActionRecord {
                user_id: ctx.user_id,
                advertiser_id: ctx.advertiser_id,
                hour: ctx.hour,
                adzone_id: ctx.adzone_id,
                click: rng.random::<f64>() < pctr,
                conversion: rng.random::<f64>() < pcvr,
            }
        })
        .collect())
}
