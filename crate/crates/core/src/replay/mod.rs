//! Unified replay: match phase over the log index, then rank-phase win
//! determination for manual (CPM/CPC/CPA) and automatic (BCB/MCB) bidding,
//! proration to budget and scale-up from the down-sampled bucket.

pub mod criteria;
pub mod index;
pub mod matching;
pub mod rank;

use serde::{Deserialize, Serialize};

pub use criteria::{BiddingType, CampaignCriteria, Objective, TargetingOption};
pub use index::{Disturbed, LogIndex, ResponseSource, UrfTable};
pub use matching::{cost_basis, impression_value, match_phase, MatchStats, MatchedAuction};
pub use rank::{manual_bid, prorate_and_scale, rank, rank_auto, rank_manual, Delivery};

use crate::error::Result;
use crate::scalar::Scalar;

/// Estimated delivery of a campaign plus the match-phase statistics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReplayResult<T = f64> {
    pub impression: T,
    pub click: T,
    pub cost: T,
    pub value: T,
    pub match_stats: MatchStats<T>,
    pub scale_factor: T,
}

impl<T: Scalar> ReplayResult<T> {
    pub fn delivery(&self) -> Delivery<T> {
        Delivery {
            impression: self.impression,
            click: self.click,
            cost: self.cost,
            value: self.value,
        }
    }

    pub fn from_parts(d: Delivery<T>, match_stats: MatchStats<T>, scale_factor: T) -> Self {
        Self {
            impression: d.impression,
            click: d.click,
            cost: d.cost,
            value: d.value,
            match_stats,
            scale_factor,
        }
    }
}

/// Replays a campaign over the index using its attached URF table.
pub fn replay<T: Scalar>(criteria: &CampaignCriteria<T>, index: &LogIndex<T>) -> Result<ReplayResult<T>> {
    replay_with(criteria, index, index.urf())
}

/// Replays a campaign with an explicit response source.
///
/// The sampled bucket carries `1/s` of the traffic, so ranking runs against
/// `budget / s` and the prorated totals are scaled back up by `s`.
pub fn replay_with<T: Scalar, S: ResponseSource<T> + ?Sized>(
    criteria: &CampaignCriteria<T>,
    index: &LogIndex<T>,
    source: &S,
) -> Result<ReplayResult<T>> {
    criteria.validate()?;
    let (matched, stats) = match_phase(criteria, index, source)?;
    let s = index.scale_factor();
    let bucket_budget = criteria.budget / s;
    let raw = rank(&matched, criteria, bucket_budget)?;
    Ok(ReplayResult::from_parts(
        prorate_and_scale(raw, bucket_budget, s),
        stats,
        s,
    ))
}

#[cfg(test)]
pub(crate) mod testkit {
    use super::*;
    use crate::synthlog::records::{AuctionRecord, UrfRecord, UtsRecord};

    pub const SELF_ADV: u32 = 1;
    pub const OTHER_ADV: u32 = 9;

    /// Three auctions (pctr .1/.2/.05, b1 5/12/2, winner = other) on user 0, tag 0.
    pub fn three_auction_index() -> LogIndex<f64> {
        let b1 = [5.0, 12.0, 2.0];
        let pctr = [0.1, 0.2, 0.05];
        let recs: Vec<AuctionRecord> = (0..3)
            .map(|i| AuctionRecord {
                request_id: i as u64 + 1,
                user_id: 0,
                hour: i as u8,
                area_id: 0,
                adzone_id: 0,
                winner: OTHER_ADV,
                b1: b1[i],
                b2: b1[i] * 0.8,
                sampled: true,
            })
            .collect();
        let urf: Vec<UrfRecord> = (0..3)
            .map(|i| UrfRecord {
                request_id: i as u64 + 1,
                advertiser_id: SELF_ADV,
                pctr: pctr[i],
                pcvr: 0.1,
            })
            .collect();
        LogIndex::build(recs, &[UtsRecord { tag_id: 0, user_id: 0 }], true, 1.0)
            .unwrap()
            .with_urf(&urf)
            .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::criteria::fixtures::cpc;
    use super::testkit::*;
    use super::*;
    use crate::synthlog::records::{AuctionRecord, UrfRecord, UtsRecord};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * (1.0 + b.abs())
    }

    fn rec(id: u64, winner: u32, b1: f64, b2: f64) -> AuctionRecord {
        AuctionRecord {
            request_id: id,
            user_id: 0,
            hour: 0,
            area_id: 0,
            adzone_id: 0,
            winner,
            b1,
            b2,
            sampled: true,
        }
    }

    #[test]
    fn cost_basis_second_price() {
        assert_eq!(cost_basis(&rec(1, OTHER_ADV, 5.0, 4.0), SELF_ADV), 5.0);
        assert_eq!(cost_basis(&rec(1, SELF_ADV, 5.0, 4.0), SELF_ADV), 4.0);
        assert_eq!(cost_basis(&rec(1, SELF_ADV, 3.0, 3.0), SELF_ADV), 3.0);
        assert_eq!(cost_basis(&rec(1, OTHER_ADV, 3.0, 3.0), SELF_ADV), 3.0);
    }

    #[test]
    fn impression_value_rows() {
        assert_eq!(impression_value(Objective::Impression, 0.2, 0.1), 1.0);
        assert_eq!(impression_value(Objective::Click, 0.2, 0.1), 0.2);
        assert!(close(impression_value(Objective::Conversion, 0.2, 0.1), 0.02));
    }

    #[test]
    fn manual_bid_rows() {
        assert_eq!(manual_bid(BiddingType::Cpm, 6.0, 0.3, 0.3).unwrap(), 6.0);
        assert!(close(manual_bid(BiddingType::Cpc, 1.0, 0.1, 0.3).unwrap(), 100.0));
        assert!(close(manual_bid(BiddingType::Cpa, 1.0, 0.1, 0.05).unwrap(), 5.0));
        assert!(manual_bid(BiddingType::Bcb, 1.0, 0.1, 0.05).is_err());
        assert!(manual_bid(BiddingType::Mcb, 1.0, 0.1, 0.05).is_err());
    }

    fn matched(idx: &LogIndex<f64>, c: &CampaignCriteria<f64>) -> Vec<MatchedAuction<f64>> {
        match_phase(c, idx, idx.urf()).unwrap().0
    }

    #[test]
    fn rank_manual_three_auction_fixture() {
        let idx = three_auction_index();
        let c = cpc(1.0, 1e9);
        let d = rank_manual(&matched(&idx, &c), &c, c.budget).unwrap();
        assert_eq!(d.impression, 3.0);
        assert!(close(d.cost, 0.019));
        assert!(close(d.click, 0.35));

        let c = cpc(0.001, 1e9);
        let d = rank_manual(&matched(&idx, &c), &c, c.budget).unwrap();
        assert_eq!(d, Delivery::default());

        let c = cpc(1.0, 1e9);
        let d = rank_manual(&matched(&idx, &c), &c, 0.0).unwrap();
        assert_eq!(d, Delivery::default());
    }

    #[test]
    fn rank_manual_bid_tie_loses() {
        let idx = three_auction_index();
        // CPM bid 5.0 equals c of the first auction: strict b > c rejects it.
        let mut c = cpc(5.0, 1e9);
        c.bidding_type = BiddingType::Cpm;
        let d = rank_manual(&matched(&idx, &c), &c, c.budget).unwrap();
        assert_eq!(d.impression, 1.0); // only the b1 = 2 auction
        assert!(close(d.cost, 0.002));
    }

    fn bcb_click(budget: f64) -> CampaignCriteria<f64> {
        let mut c = cpc(1.0, budget);
        c.bidding_type = BiddingType::Bcb;
        c.bidprice = None;
        c
    }

    #[test]
    fn rank_auto_greedy_fixture() {
        let idx = three_auction_index();
        let c = bcb_click(0.007);
        let d = rank_auto(&matched(&idx, &c), &c, c.budget).unwrap();
        assert_eq!(d.impression, 2.0);
        assert!(close(d.cost, 0.007));
        assert!(close(d.click, 0.15));
        assert!(close(d.value, 0.15));
    }

    #[test]
    fn rank_auto_mcb_constraint_ledger() {
        let idx = three_auction_index();
        let mut c = bcb_click(1e9);
        c.bidding_type = BiddingType::Mcb;
        c.constraint = Some(45.0);
        let d = rank_auto(&matched(&idx, &c), &c, c.budget).unwrap();
        assert_eq!(d.impression, 2.0);
        assert!(close(d.click, 0.15));
        assert!(close(d.cost, 0.007));
    }

    #[test]
    fn rank_auto_empty_and_contract() {
        let c = bcb_click(1.0);
        assert_eq!(rank_auto(&[], &c, 1.0).unwrap(), Delivery::default());
        let m = cpc(1.0, 1.0);
        assert!(rank_auto(&[], &m, 1.0).is_err());
        let mut mcb = bcb_click(1.0);
        mcb.bidding_type = BiddingType::Mcb;
        assert!(rank_auto(&[], &mcb, 1.0).is_err());
    }

    #[test]
    fn prorate_examples() {
        let d = Delivery {
            impression: 3.0,
            click: 0.35,
            cost: 0.019,
            value: 0.35,
        };
        let p = prorate_and_scale(d, 0.008, 1.0);
        assert_eq!(p.cost, 0.008);
        assert!(close(p.impression, 3.0 * 8.0 / 19.0));
        assert!(close(p.click, 0.35 * 8.0 / 19.0));

        let p = prorate_and_scale(d, 1.0, 2.0);
        assert_eq!(p.impression, 6.0);
        assert_eq!(p.cost, 0.038);

        let z = prorate_and_scale(Delivery::<f64>::default(), 1.0, 100.0);
        assert_eq!(z, Delivery::default());
    }

    #[test]
    fn replay_end_to_end_fixture() {
        let idx = three_auction_index();
        let r = replay(&cpc(1.0, 1e9), &idx).unwrap();
        assert_eq!(r.impression, 3.0);
        assert!(close(r.cost, 0.019));
        assert!(close(r.click, 0.35));
        assert_eq!(r.match_stats.audience_size, 1);
        assert_eq!(r.scale_factor, 1.0);
    }

    #[test]
    fn replay_over_empty_log_is_zero() {
        let idx = LogIndex::<f64>::build(vec![], &[], true, 1.0).unwrap();
        let r = replay(&cpc(1.0, 10.0), &idx).unwrap();
        assert_eq!(r, ReplayResult { scale_factor: 1.0, ..Default::default() });
    }

    #[test]
    fn missing_urf_is_integrity_error() {
        let idx = LogIndex::build(
            vec![rec(42, OTHER_ADV, 2.0, 1.0)],
            &[UtsRecord { tag_id: 0, user_id: 0 }],
            true,
            1.0,
        )
        .unwrap();
        let err = replay(&cpc(1.0, 10.0), &idx).unwrap_err();
        assert!(err.to_string().contains("42"), "{err}");
    }

    #[test]
    fn match_phase_filters_by_brute_force() {
        // users 0..3 on hours 9/10, tag 5 covers users {1, 2}
        let recs: Vec<AuctionRecord> = (0..5u64)
            .map(|i| AuctionRecord {
                request_id: i,
                user_id: (i % 4) as u32,
                hour: if i % 2 == 0 { 10 } else { 9 },
                area_id: 0,
                adzone_id: 0,
                winner: OTHER_ADV,
                b1: 3.0,
                b2: 1.0,
                sampled: true,
            })
            .collect();
        let uts = [
            UtsRecord { tag_id: 5, user_id: 1 },
            UtsRecord { tag_id: 5, user_id: 2 },
            UtsRecord { tag_id: 6, user_id: 3 },
        ];
        let urf: Vec<UrfRecord> = recs
            .iter()
            .map(|r| UrfRecord {
                request_id: r.request_id,
                advertiser_id: SELF_ADV,
                pctr: 0.1,
                pcvr: 0.1,
            })
            .collect();
        let idx = LogIndex::build(recs.clone(), &uts, true, 1.0)
            .unwrap()
            .with_urf(&urf)
            .unwrap();
        let mut c = cpc(1.0, 10.0);
        c.targeting_tags = [5].into_iter().collect();
        c.hours = [10].into_iter().collect();
        let (m, stats) = match_phase(&c, &idx, idx.urf()).unwrap();
        let expect: Vec<u64> = recs
            .iter()
            .filter(|r| (r.user_id == 1 || r.user_id == 2) && r.hour == 10)
            .map(|r| r.request_id)
            .collect();
        assert_eq!(m.iter().map(|x| x.request_id).collect::<Vec<_>>(), expect);
        assert_eq!(stats.audience_size, 1);

        c.targeting_tags = [77].into_iter().collect();
        let (m, stats) = match_phase(&c, &idx, idx.urf()).unwrap();
        assert!(m.is_empty());
        assert_eq!(stats, MatchStats::default());

        c.targeting_tags = [5, 6].into_iter().collect();
        c.hours = (0..24).collect();
        let (m, _) = match_phase(&c, &idx, idx.urf()).unwrap();
        // user 0 is in no tag
        assert_eq!(m.len(), recs.iter().filter(|r| r.user_id != 0).count());
    }

    #[test]
    fn unsampled_records_are_dropped() {
        let mut r = rec(1, OTHER_ADV, 2.0, 1.0);
        r.sampled = false;
        let idx = LogIndex::build(vec![r.clone(), rec(2, OTHER_ADV, 2.0, 1.0)], &[], true, 1.0).unwrap();
        assert_eq!(idx.len(), 1);
        let full = LogIndex::build(vec![r, rec(2, OTHER_ADV, 2.0, 1.0)], &[], false, 1.0).unwrap();
        assert_eq!(full.len(), 2);
    }
}
