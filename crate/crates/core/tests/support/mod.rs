//! Random small replay instances and a brute-force replay oracle written
//! straight from the algorithm's description, sharing no code with the
//! library's match and rank phases.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::seq::{IteratorRandom, SliceRandom};
use rand::Rng;

use cpf_core::replay::{BiddingType, CampaignCriteria, LogIndex, Objective, ReplayResult, TargetingOption};
use cpf_core::synthlog::{AuctionRecord, UrfRecord, UtsRecord};

pub const ADVERTISERS: u32 = 3;
pub const USERS: u32 = 10;
pub const TAGS: u32 = 6;
pub const AREAS: u32 = 4;
pub const ADZONES: u32 = 4;
/// Hours are drawn from a narrow band so the hour filter bites often.
pub const HOURS: u8 = 8;

#[derive(Debug, Clone)]
pub struct Instance {
    pub auctions: Vec<AuctionRecord>,
    pub uts: Vec<UtsRecord>,
    pub urf: Vec<UrfRecord>,
    pub scale: f64,
}

impl Instance {
    pub fn index(&self) -> LogIndex<f64> {
        LogIndex::build(self.auctions.iter().cloned(), &self.uts, true, self.scale)
            .and_then(|i| i.with_urf(&self.urf))
            .expect("valid instance")
    }
}

fn subset<R: Rng, T: Copy + Ord>(rng: &mut R, universe: impl Iterator<Item = T> + Clone) -> BTreeSet<T> {
    let n = universe.clone().count();
    let k = rng.random_range(1..=n);
    universe.choose_multiple(rng, k).into_iter().collect()
}

/// A log of at most `max_auctions` auctions with every advertiser's
/// responses on every request.
pub fn random_instance<R: Rng>(rng: &mut R, max_auctions: usize) -> Instance {
    let n = rng.random_range(0..=max_auctions);
    // request ids out of log order so the sorts have work to do
    let mut ids: Vec<u64> = (1..=n as u64).map(|i| i * 13).collect();
    ids.shuffle(rng);
    let auctions: Vec<AuctionRecord> = ids
        .into_iter()
        .map(|request_id| {
            let b2 = rng.random_range(0.5..20.0);
            let b1 = if rng.random_bool(0.1) { b2 } else { b2 + rng.random_range(0.0..10.0) };
            AuctionRecord {
                request_id,
                user_id: rng.random_range(0..USERS),
                hour: rng.random_range(0..HOURS),
                area_id: rng.random_range(0..AREAS),
                adzone_id: rng.random_range(0..ADZONES),
                winner: rng.random_range(1..=ADVERTISERS + 2),
                b1,
                b2,
                sampled: rng.random_bool(0.8),
            }
        })
        .collect();
    let uts: Vec<UtsRecord> = (0..TAGS)
        .flat_map(|t| (0..USERS).map(move |u| (t, u)))
        .filter(|_| rng.random_bool(0.3))
        .map(|(tag_id, user_id)| UtsRecord { tag_id, user_id })
        .collect();
    let urf: Vec<UrfRecord> = auctions
        .iter()
        .flat_map(|a| (1..=ADVERTISERS).map(move |adv| (a.request_id, adv)))
        .map(|(request_id, advertiser_id)| UrfRecord {
            request_id,
            advertiser_id,
            pctr: rng.random_range(0.001..0.3),
            pcvr: rng.random_range(0.01..0.5),
        })
        .collect();
    let scale = [1.0, 2.0, 4.5][rng.random_range(0..3)];
    Instance { auctions, uts, urf, scale }
}

pub fn random_bidprice<R: Rng>(rng: &mut R, bt: BiddingType) -> Option<f64> {
    match bt {
        BiddingType::Cpm => Some(rng.random_range(0.5..30.0)),
        BiddingType::Cpc => Some(rng.random_range(0.005..0.3)),
        BiddingType::Cpa => Some(rng.random_range(0.05..3.0)),
        BiddingType::Bcb | BiddingType::Mcb => None,
    }
}

pub fn random_criteria<R: Rng>(rng: &mut R, bidding_type: Option<BiddingType>) -> CampaignCriteria<f64> {
    let bidding_type = bidding_type.unwrap_or_else(|| {
        [BiddingType::Cpm, BiddingType::Cpc, BiddingType::Cpa, BiddingType::Bcb, BiddingType::Mcb]
            [rng.random_range(0..5)]
    });
    let objective = [Objective::Impression, Objective::Click, Objective::Conversion][rng.random_range(0..3)];
    // values are tiny for conversions, so the eCPM-per-value limit spans a wide range
    let constraint = (bidding_type == BiddingType::Mcb).then(|| 10f64.powf(rng.random_range(0.5..5.0)));
    CampaignCriteria {
        advertiser_id: rng.random_range(1..=ADVERTISERS),
        hours: subset(rng, 0..HOURS),
        areas: subset(rng, 0..AREAS),
        adzones: subset(rng, 0..ADZONES),
        targeting_option: TargetingOption::Interest,
        targeting_tags: subset(rng, 0..TAGS),
        objective,
        budget: 10f64.powf(rng.random_range(-3.0..0.0)),
        bidding_type,
        bidprice: random_bidprice(rng, bidding_type),
        constraint,
    }
}

/// What the oracle reports.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Expected {
    pub impression: f64,
    pub click: f64,
    pub cost: f64,
    pub value: f64,
    pub audience_size: u64,
}

struct Row {
    request_id: u64,
    hour: u8,
    pctr: f64,
    pcvr: f64,
    c: f64,
    v: f64,
}

/// Brute-force replay. Scans every record, evaluates the filters, joins the
/// responses by linear search, then walks the rows exactly as the algorithm
/// listing describes with the ledger held in currency.
pub fn oracle(inst: &Instance, crit: &CampaignCriteria<f64>) -> Expected {
    let adv = crit.advertiser_id;
    let audience_users: BTreeSet<u32> = inst
        .uts
        .iter()
        .filter(|e| crit.targeting_tags.contains(&e.tag_id))
        .map(|e| e.user_id)
        .collect();
    let mut rows = Vec::new();
    let mut matched_users = BTreeSet::new();
    for a in &inst.auctions {
        let hit = a.sampled
            && audience_users.contains(&a.user_id)
            && crit.hours.contains(&a.hour)
            && crit.areas.contains(&a.area_id)
            && crit.adzones.contains(&a.adzone_id);
        if !hit {
            continue;
        }
        matched_users.insert(a.user_id);
        let u = inst
            .urf
            .iter()
            .find(|u| u.request_id == a.request_id && u.advertiser_id == adv)
            .expect("complete urf");
        let c = if a.winner == adv { a.b2 } else { a.b1 };
        let v = match crit.objective {
            Objective::Impression => 1.0,
            Objective::Click => u.pctr,
            Objective::Conversion => u.pctr * u.pcvr,
        };
        rows.push(Row { request_id: a.request_id, hour: a.hour, pctr: u.pctr, pcvr: u.pcvr, c, v });
    }

    // the sampled bucket sees 1/s of the traffic and of the budget
    let budget = crit.budget / inst.scale;
    let (mut imp, mut click, mut spent, mut value) = (0.0, 0.0, 0.0, 0.0);
    if crit.bidding_type.is_manual() {
        rows.sort_by(|a, b| (a.hour, a.request_id).cmp(&(b.hour, b.request_id)));
        let bp = crit.bidprice.unwrap();
        for r in &rows {
            let bid = match crit.bidding_type {
                BiddingType::Cpm => bp,
                BiddingType::Cpc => bp * r.pctr * 1000.0,
                _ => bp * r.pctr * r.pcvr * 1000.0,
            };
            if spent < budget && bid > r.c {
                imp += 1.0;
                spent += r.c / 1000.0;
                click += r.pctr;
                value += r.v;
            }
        }
    } else {
        rows.sort_by(|a, b| (a.c / a.v).total_cmp(&(b.c / b.v)).then(a.request_id.cmp(&b.request_id)));
        for r in &rows {
            // the limit is expressed as eCPM per objective unit
            let within = match crit.constraint {
                Some(limit) if crit.bidding_type == BiddingType::Mcb && value > 0.0 => spent * 1000.0 / value < limit,
                _ => true,
            };
            if !(spent < budget && within) {
                break;
            }
            imp += 1.0;
            spent += r.c / 1000.0;
            click += r.pctr;
            value += r.v;
        }
    }
    let k = if spent > budget { budget / spent } else { 1.0 };
    let s = inst.scale;
    Expected {
        impression: imp * k * s,
        click: click * k * s,
        cost: spent * k * s,
        value: value * k * s,
        audience_size: matched_users.len() as u64,
    }
}

/// Largest absolute difference over the fractional fields, or `None` when the
/// audience sizes disagree.
pub fn discrepancy(got: &ReplayResult<f64>, want: &Expected) -> Option<f64> {
    if got.match_stats.audience_size != want.audience_size {
        return None;
    }
    Some(
        [
            got.impression - want.impression,
            got.click - want.click,
            got.cost - want.cost,
            got.value - want.value,
        ]
        .iter()
        .fold(0.0f64, |m, d| m.max(d.abs())),
    )
}

/// Budget safety bound on a final result.
pub fn within_budget(got: &ReplayResult<f64>, crit: &CampaignCriteria<f64>) -> bool {
    got.cost <= crit.budget * got.scale_factor + 1e-9
}
