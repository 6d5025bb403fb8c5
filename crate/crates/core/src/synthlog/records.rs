use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// One historical auction with the top-two eCPM bids and the winner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionRecord<T = f64> {
    pub request_id: u64,
    pub user_id: u32,
    pub hour: u8,
    pub area_id: u32,
    pub adzone_id: u32,
    pub winner: u32,
    pub b1: T,
    pub b2: T,
    pub sampled: bool,
}

/// A (tag, user) edge of the user-tag-service relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtsRecord {
    pub tag_id: u32,
    pub user_id: u32,
}

/// Predicted responses of one advertiser on one sampled request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrfRecord<T = f64> {
    pub request_id: u64,
    pub advertiser_id: u32,
    pub pctr: T,
    pub pcvr: T,
}

/// An impression actually shown, with its realized click and conversion.
/// Training input for the response models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub user_id: u32,
    pub advertiser_id: u32,
    pub hour: u8,
    pub adzone_id: u32,
    pub click: bool,
    pub conversion: bool,
}

/// Per-record validation hook used by the NDJSON reader.
pub trait CheckRecord {
    fn check(&self) -> Result<(), String> {
        Ok(())
    }
}

impl<T: Scalar> CheckRecord for AuctionRecord<T> {
    fn check(&self) -> Result<(), String> {
        if self.hour > 23 {
            return Err(format!("hour {} outside 0..=23", self.hour));
        }
        if !(self.b2.is_finite() && self.b2 > T::zero()) {
            return Err(format!("b2 must be positive, got {}", self.b2));
        }
        if !(self.b1.is_finite() && self.b1 >= self.b2) {
            return Err(format!("b1 ({}) < b2 ({})", self.b1, self.b2));
        }
        Ok(())
    }
}

impl<T: Scalar> CheckRecord for UrfRecord<T> {
    fn check(&self) -> Result<(), String> {
        let open = |p: T| p > T::zero() && p < T::one();
        if !open(self.pctr) {
            return Err(format!("pctr {} outside (0,1)", self.pctr));
        }
        if !open(self.pcvr) {
            return Err(format!("pcvr {} outside (0,1)", self.pcvr));
        }
        Ok(())
    }
}

impl CheckRecord for UtsRecord {}
impl CheckRecord for ActionRecord {}
