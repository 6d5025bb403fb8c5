//! Calibration input: criteria one-hots plus standardized replay features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::replay::{BiddingType, CampaignCriteria, Objective, ReplayResult, TargetingOption};
use crate::scalar::Scalar;

pub const N_DENSE: usize = 10;
pub const DENSE_NAMES: [&str; N_DENSE] = [
    "pctr_mean",
    "pctr_median",
    "cost_mean",
    "cost_median",
    "cost",
    "value_mean",
    "value_median",
    "audience_size",
    "click",
    "impression",
];
pub const N_TARGETING: usize = TargetingOption::ALL.len();
pub const N_OBJECTIVE: usize = Objective::ALL.len();
pub const N_BIDDING: usize = BiddingType::ALL.len();
pub const INPUT_DIM: usize = N_TARGETING + N_OBJECTIVE + N_BIDDING + N_DENSE;

/// Replay outputs in `DENSE_NAMES` order, before any transform.
pub fn raw_dense<T: Scalar>(r: &ReplayResult<T>) -> [T; N_DENSE] {
    let s = &r.match_stats;
    [
        s.pctr_mean,
        s.pctr_median,
        s.cost_mean,
        s.cost_median,
        r.cost,
        s.value_mean,
        s.value_median,
        T::from_u64(s.audience_size).unwrap_or_else(T::infinity),
        r.click,
        r.impression,
    ]
}

/// Dense features are log1p-compressed (all are non-negative and span
/// orders of magnitude), then z-scored with training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats<T = f64> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Scalar> FeatureStats<T> {
    pub fn fit<'a>(replays: impl IntoIterator<Item = &'a ReplayResult<T>>) -> Result<Self> {
        let rows: Vec<[T; N_DENSE]> = replays.into_iter().map(|r| compress(raw_dense(r))).collect();
        if rows.is_empty() {
            return Err(Error::InsufficientData("no rows to fit feature statistics".into()));
        }
        let n = T::from_usize_lossy(rows.len());
        let mut mean = vec![T::zero(); N_DENSE];
        for row in &rows {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += *v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![T::zero(); N_DENSE];
        for row in &rows {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (*v - *m) * (*v - *m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Ok(Self { mean, std })
    }

    pub fn standardize(&self, raw: [T; N_DENSE]) -> [T; N_DENSE] {
        let mut out = compress(raw);
        for ((v, m), s) in out.iter_mut().zip(&self.mean).zip(&self.std) {
            // Spread at rounding level means a constant column.
            let floor = T::lit(1e-12) * m.abs().max(T::one());
            *v = if *s > floor { (*v - *m) / *s } else { T::zero() };
        }
        out
    }
}

fn compress<T: Scalar>(mut raw: [T; N_DENSE]) -> [T; N_DENSE] {
    for v in raw.iter_mut() {
        *v = v.max(T::zero()).ln_1p();
    }
    raw
}

/// Encoded calibration input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibInput<T = f64> {
    pub targeting_option: [T; N_TARGETING],
    pub objective: [T; N_OBJECTIVE],
    pub bidding_type: [T; N_BIDDING],
    pub dense: [T; N_DENSE],
}

impl<T: Scalar> CalibInput<T> {
    /// Flat vector: one-hots (targeting, objective, bidding) then dense.
    pub fn to_vec(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(INPUT_DIM);
        v.extend_from_slice(&self.targeting_option);
        v.extend_from_slice(&self.objective);
        v.extend_from_slice(&self.bidding_type);
        v.extend_from_slice(&self.dense);
        v
    }
}

fn one_hot<T: Scalar, const N: usize>(i: usize, what: &str) -> Result<[T; N]> {
    if i >= N {
        return Err(Error::Encoding(format!("{what} index {i} outside one-hot width {N}")));
    }
    let mut v = [T::zero(); N];
    v[i] = T::one();
    Ok(v)
}

pub fn build_calib_input<T: Scalar>(
    criteria: &CampaignCriteria<T>,
    replay: &ReplayResult<T>,
    stats: &FeatureStats<T>,
) -> Result<CalibInput<T>> {
    if stats.mean.len() != N_DENSE || stats.std.len() != N_DENSE {
        return Err(Error::DimensionMismatch {
            expected: N_DENSE,
            got: stats.mean.len(),
        });
    }
    Ok(CalibInput {
        targeting_option: one_hot(criteria.targeting_option.index(), "targeting_option")?,
        objective: one_hot(criteria.objective.index(), "objective")?,
        bidding_type: one_hot(criteria.bidding_type.index(), "bidding_type")?,
        dense: stats.standardize(raw_dense(replay)),
    })
}
