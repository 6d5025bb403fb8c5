use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Objective {
    Impression,
    Click,
    Conversion,
}

impl Objective {
    pub const ALL: [Objective; 3] = [Objective::Impression, Objective::Click, Objective::Conversion];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BiddingType {
    Cpm,
    Cpc,
    Cpa,
    Bcb,
    Mcb,
}

impl BiddingType {
    pub const ALL: [BiddingType; 5] = [
        BiddingType::Cpm,
        BiddingType::Cpc,
        BiddingType::Cpa,
        BiddingType::Bcb,
        BiddingType::Mcb,
    ];

    /// Fixed-bidprice types (CPM/CPC/CPA).
    pub fn is_manual(self) -> bool {
        matches!(self, BiddingType::Cpm | BiddingType::Cpc | BiddingType::Cpa)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BiddingType::Cpm => "CPM",
            BiddingType::Cpc => "CPC",
            BiddingType::Cpa => "CPA",
            BiddingType::Bcb => "BCB",
            BiddingType::Mcb => "MCB",
        }
    }
}

/// Family a targeting tag belongs to. Delivery strategies (e.g. parallel
/// retrieval) differ per family, so the calibrator sees it as a one-hot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetingOption {
    Demographic,
    Interest,
    Behavior,
    Lookalike,
    Keyword,
}

impl TargetingOption {
    pub const ALL: [TargetingOption; 5] = [
        TargetingOption::Demographic,
        TargetingOption::Interest,
        TargetingOption::Behavior,
        TargetingOption::Lookalike,
        TargetingOption::Keyword,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// Advertiser inputs for a new campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignCriteria<T = f64> {
    pub advertiser_id: u32,
    pub hours: BTreeSet<u8>,
    pub areas: BTreeSet<u32>,
    pub adzones: BTreeSet<u32>,
    pub targeting_option: TargetingOption,
    pub targeting_tags: BTreeSet<u32>,
    pub objective: Objective,
    pub budget: T,
    pub bidding_type: BiddingType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bidprice: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<T>,
}

impl<T: Scalar> CampaignCriteria<T> {
    /// Checks the structural invariants. The first offending field is reported.
    pub fn validate(&self) -> Result<()> {
        if self.hours.is_empty() {
            return Err(Error::criteria("hours", "must not be empty"));
        }
        if let Some(h) = self.hours.iter().find(|h| **h > 23) {
            return Err(Error::criteria("hours", format!("hour {h} outside 0..=23")));
        }
        if self.areas.is_empty() {
            return Err(Error::criteria("areas", "must not be empty"));
        }
        if self.adzones.is_empty() {
            return Err(Error::criteria("adzones", "must not be empty"));
        }
        if self.targeting_tags.is_empty() {
            return Err(Error::criteria("targeting_tags", "must not be empty"));
        }
        if !(self.budget.is_finite() && self.budget > T::zero()) {
            return Err(Error::criteria("budget", "must be a finite positive amount"));
        }
        match (self.bidding_type.is_manual(), self.bidprice) {
            (true, None) => {
                return Err(Error::criteria("bidprice", "required for manual bidding"));
            }
            (true, Some(b)) if !(b.is_finite() && b > T::zero()) => {
                return Err(Error::criteria("bidprice", "must be a finite positive amount"));
            }
            (false, Some(_)) => {
                return Err(Error::criteria("bidprice", "only allowed for manual bidding"));
            }
            _ => {}
        }
        match (self.bidding_type == BiddingType::Mcb, self.constraint) {
            (true, None) => return Err(Error::criteria("constraint", "required for MCB")),
            (true, Some(c)) if !(c.is_finite() && c > T::zero()) => {
                return Err(Error::criteria("constraint", "must be a finite positive amount"));
            }
            (false, Some(_)) => {
                return Err(Error::criteria("constraint", "only allowed for MCB"));
            }
            _ => {}
        }
        Ok(())
    }
}
