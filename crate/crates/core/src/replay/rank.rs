//! Rank phase: which matched auctions the campaign wins and what it accumulates.
//!
//! Bids and costs to win are eCPM (currency per 1000 impressions). The
//! budget ledger is kept in eCPM sums and compared against `budget * 1000`,
//! so one won impression adds `c / 1000` currency to the reported cost.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::criteria::{BiddingType, CampaignCriteria};
use super::matching::MatchedAuction;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MILLE: f64 = 1000.0;

/// Accumulated delivery of a campaign. `cost` is currency, `value` is in
/// objective units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Delivery<T = f64> {
    pub impression: T,
    pub click: T,
    pub cost: T,
    pub value: T,
}

#[derive(Default)]
struct Ledger<T> {
    impression: T,
    click: T,
    cost_ecpm: T,
    value: T,
}

impl<T: Scalar> Ledger<T> {
    fn accept(&mut self, m: &MatchedAuction<T>) {
        self.impression += T::one();
        self.cost_ecpm += m.c;
        self.click += m.pctr;
        self.value += m.v;
    }

    fn finish(self) -> Delivery<T> {
        Delivery {
            impression: self.impression,
            click: self.click,
            cost: self.cost_ecpm / T::lit(MILLE),
            value: self.value,
        }
    }
}

/// eCPM bid of a fixed-bidprice campaign on one impression.
pub fn manual_bid<T: Scalar>(bidding_type: BiddingType, bidprice: T, pctr: T, pcvr: T) -> Result<T> {
    let mille = T::lit(MILLE);
    match bidding_type {
        BiddingType::Cpm => Ok(bidprice),
        BiddingType::Cpc => Ok(bidprice * pctr * mille),
        BiddingType::Cpa => Ok(bidprice * pctr * pcvr * mille),
        BiddingType::Bcb | BiddingType::Mcb => Err(Error::Contract(format!(
            "manual_bid called for automatic bidding type {}",
            bidding_type.as_str()
        ))),
    }
}

/// Manual bidding: walk the auctions in (hour, request_id) order and win
/// every auction whose bid strictly beats the cost while budget remains.
pub fn rank_manual<T: Scalar>(
    matched: &[MatchedAuction<T>],
    criteria: &CampaignCriteria<T>,
    budget: T,
) -> Result<Delivery<T>> {
    let bidprice = criteria.bidprice.ok_or_else(|| {
        Error::Contract("manual bidding requires a bidprice".into())
    })?;
    let budget_ecpm = budget * T::lit(MILLE);
    let mut order: Vec<&MatchedAuction<T>> = matched.iter().collect();
    order.sort_by_key(|m| (m.hour, m.request_id));

    let mut ledger = Ledger::default();
    for m in order {
        if ledger.cost_ecpm >= budget_ecpm {
            break;
        }
        let bid = manual_bid(criteria.bidding_type, bidprice, m.pctr, m.pcvr)?;
        if bid > m.c {
            ledger.accept(m);
        }
    }
    Ok(ledger.finish())
}

/// Ascending cost-per-value order with request_id tie-break.
pub fn efficiency_order<T: Scalar>(a: &MatchedAuction<T>, b: &MatchedAuction<T>) -> Ordering {
    (a.c / a.v)
        .partial_cmp(&(b.c / b.v))
        .unwrap_or(Ordering::Equal)
        .then(a.request_id.cmp(&b.request_id))
}

/// Automatic bidding (BCB/MCB): greedy knapsack in ascending c/v order.
/// MCB additionally stops accepting once the running eCPM-cost per value
/// unit reaches the constraint; the ratio is checked before each acceptance
/// and holds vacuously while nothing has been won.
pub fn rank_auto<T: Scalar>(
    matched: &[MatchedAuction<T>],
    criteria: &CampaignCriteria<T>,
    budget: T,
) -> Result<Delivery<T>> {
    let constraint = match criteria.bidding_type {
        BiddingType::Bcb => None,
        BiddingType::Mcb => Some(criteria.constraint.ok_or_else(|| {
            Error::Contract("MCB requires a constraint".into())
        })?),
        other => {
            return Err(Error::Contract(format!(
                "rank_auto called for manual bidding type {}",
                other.as_str()
            )))
        }
    };
    let budget_ecpm = budget * T::lit(MILLE);
    let mut order: Vec<&MatchedAuction<T>> = matched.iter().collect();
    order.sort_by(|a, b| efficiency_order(a, b));

    let mut ledger = Ledger::default();
    for m in order {
        let condition = match constraint {
            Some(limit) if ledger.value > T::zero() => ledger.cost_ecpm / ledger.value < limit,
            _ => true,
        };
        if ledger.cost_ecpm < budget_ecpm && condition {
            ledger.accept(m);
        } else {
            // the ledger is frozen from here on, so no later auction can pass
            break;
        }
    }
    Ok(ledger.finish())
}

pub fn rank<T: Scalar>(
    matched: &[MatchedAuction<T>],
    criteria: &CampaignCriteria<T>,
    budget: T,
) -> Result<Delivery<T>> {
    if criteria.bidding_type.is_manual() {
        rank_manual(matched, criteria, budget)
    } else {
        rank_auto(matched, criteria, budget)
    }
}

/// Scales everything by `budget / cost` when the ledger overshot the budget,
/// then scales up by the down-sampling factor `s`.
pub fn prorate_and_scale<T: Scalar>(d: Delivery<T>, budget: T, s: T) -> Delivery<T> {
    let mut out = d;
    if out.cost > budget {
        let f = budget / out.cost;
        out.impression *= f;
        out.click *= f;
        out.value *= f;
        out.cost = budget;
    }
    Delivery {
        impression: out.impression * s,
        click: out.click * s,
        cost: out.cost * s,
        value: out.value * s,
    }
}
