use serde::{Deserialize, Serialize};

use super::criteria::{CampaignCriteria, Objective};
use super::index::{LogIndex, ResponseSource};
use crate::error::{Error, Result};
use crate::scalar::{mean, median, Scalar};
use crate::synthlog::records::AuctionRecord;

/// A retrieved auction joined with the campaign's predicted responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedAuction<T = f64> {
    pub request_id: u64,
    pub user_id: u32,
    pub hour: u8,
    pub winner: u32,
    pub b1: T,
    pub b2: T,
    pub pctr: T,
    pub pcvr: T,
    /// Impression value in objective units.
    pub v: T,
    /// Cost to win, eCPM.
    pub c: T,
}

/// Statistics of the matched auction set. Cost statistics are in eCPM.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchStats<T = f64> {
    pub audience_size: u64,
    pub pctr_mean: T,
    pub pctr_median: T,
    pub cost_mean: T,
    pub cost_median: T,
    pub value_mean: T,
    pub value_median: T,
}

/// Second-price cost to win: the highest competing bid.
pub fn cost_basis<T: Scalar>(record: &AuctionRecord<T>, advertiser_id: u32) -> T {
    if record.winner == advertiser_id {
        record.b2
    } else {
        record.b1
    }
}

pub fn impression_value<T: Scalar>(objective: Objective, pctr: T, pcvr: T) -> T {
    match objective {
        Objective::Impression => T::one(),
        Objective::Click => pctr,
        Objective::Conversion => pctr * pcvr,
    }
}

/// Set membership for the filter columns: a flag table for small ids,
/// the ordered set itself otherwise.
enum Membership<'a> {
    Table(Vec<bool>),
    Set(&'a std::collections::BTreeSet<u32>),
}

impl<'a> Membership<'a> {
    const MAX_TABLE: u32 = 1 << 16;

    fn new(ids: &'a std::collections::BTreeSet<u32>) -> Self {
        match ids.last() {
            Some(&m) if m >= Self::MAX_TABLE => Membership::Set(ids),
            last => {
                let mut v = vec![false; last.map_or(0, |m| *m as usize + 1)];
                for &i in ids {
                    v[i as usize] = true;
                }
                Membership::Table(v)
            }
        }
    }

    fn contains(&self, id: u32) -> bool {
        match self {
            Membership::Table(v) => v.get(id as usize).copied().unwrap_or(false),
            Membership::Set(s) => s.contains(&id),
        }
    }
}

/// Auction indices retrieved by the two-stage rule (campaign → tags → users)
/// plus the hour/area/adzone filters, in index (request) order.
/// `extra_users` widens the audience beyond the tag union.
pub fn retrieve<T: Scalar>(
    criteria: &CampaignCriteria<T>,
    index: &LogIndex<T>,
    extra_users: &[u32],
) -> Vec<usize> {
    let mut audience: Vec<u32> = criteria
        .targeting_tags
        .iter()
        .flat_map(|t| index.tag_users(*t).iter().copied())
        .chain(extra_users.iter().copied())
        .collect();
    audience.sort_unstable();
    audience.dedup();

    let hours = criteria.hours.iter().fold(0u32, |m, &h| if h < 24 { m | 1 << h } else { m });
    let areas = Membership::new(&criteria.areas);
    let adzones = Membership::new(&criteria.adzones);
    let records = index.records();
    let mut hits: Vec<usize> = Vec::new();
    for user in audience {
        for &i in index.user_auctions(user) {
            let r = &records[i as usize];
            if hours >> r.hour & 1 == 1 && areas.contains(r.area_id) && adzones.contains(r.adzone_id) {
                hits.push(i as usize);
            }
        }
    }
    hits.sort_unstable();
    hits
}

/// Match phase: retrieval joined with responses, cost basis and value.
pub fn match_phase<T: Scalar, S: ResponseSource<T> + ?Sized>(
    criteria: &CampaignCriteria<T>,
    index: &LogIndex<T>,
    source: &S,
) -> Result<(Vec<MatchedAuction<T>>, MatchStats<T>)> {
    match_phase_with(criteria, index, source, &[])
}

pub fn match_phase_with<T: Scalar, S: ResponseSource<T> + ?Sized>(
    criteria: &CampaignCriteria<T>,
    index: &LogIndex<T>,
    source: &S,
    extra_users: &[u32],
) -> Result<(Vec<MatchedAuction<T>>, MatchStats<T>)> {
    let matched = match_auctions(criteria, index, source, extra_users)?;
    let stats = match_stats(&matched);
    Ok((matched, stats))
}

/// Match phase without the summary statistics.
pub fn match_auctions<T: Scalar, S: ResponseSource<T> + ?Sized>(
    criteria: &CampaignCriteria<T>,
    index: &LogIndex<T>,
    source: &S,
    extra_users: &[u32],
) -> Result<Vec<MatchedAuction<T>>> {
    let adv = criteria.advertiser_id;
    let records = index.records();
    retrieve(criteria, index, extra_users)
        .into_iter()
        .map(|i| {
            let r = &records[i];
            let (pctr, pcvr) = source.responses(i, r, adv).ok_or_else(|| {
                Error::DataIntegrity(format!(
                    "no URF record for request_id {} and advertiser {adv}",
                    r.request_id
                ))
            })?;
            Ok(MatchedAuction {
                request_id: r.request_id,
                user_id: r.user_id,
                hour: r.hour,
                winner: r.winner,
                b1: r.b1,
                b2: r.b2,
                pctr,
                pcvr,
                v: impression_value(criteria.objective, pctr, pcvr),
                c: cost_basis(r, adv),
            })
        })
        .collect()
}

pub fn match_stats<T: Scalar>(matched: &[MatchedAuction<T>]) -> MatchStats<T> {
    if matched.is_empty() {
        return MatchStats::default();
    }
    let mut users: Vec<u32> = matched.iter().map(|m| m.user_id).collect();
    users.sort_unstable();
    users.dedup();
    let pctr: Vec<T> = matched.iter().map(|m| m.pctr).collect();
    let cost: Vec<T> = matched.iter().map(|m| m.c).collect();
    let value: Vec<T> = matched.iter().map(|m| m.v).collect();
    MatchStats {
        audience_size: users.len() as u64,
        pctr_mean: mean(&pctr),
        pctr_median: median(&pctr),
        cost_mean: mean(&cost),
        cost_median: median(&cost),
        value_mean: mean(&value),
        value_median: median(&value),
    }
}
