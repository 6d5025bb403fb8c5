//! In-memory log index: sampled auctions, the tag→user relation, a
//! user→auction inverted index and the per-advertiser response table.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::synthlog::records::{AuctionRecord, UrfRecord, UtsRecord};

/// Source of (pctr, pcvr) for an advertiser on an indexed auction.
pub trait ResponseSource<T: Scalar>: Sync {
    fn responses(&self, record_idx: usize, record: &AuctionRecord<T>, advertiser: u32)
        -> Option<(T, T)>;
}

/// Response table loaded from the URF log, aligned with the index records.
#[derive(Debug, Clone, Default)]
pub struct UrfTable<T = f64> {
    by_advertiser: BTreeMap<u32, Vec<(T, T)>>,
}

impl<T: Scalar> UrfTable<T> {
    /// Dense table for the given advertisers over every record of `index`.
    pub fn tabulate<F>(index: &LogIndex<T>, advertisers: &[u32], f: F) -> Self
    where
        F: Fn(&AuctionRecord<T>, u32) -> (T, T) + Sync,
    {
        let by_advertiser = advertisers
            .par_iter()
            .map(|&a| (a, index.records().iter().map(|r| f(r, a)).collect()))
            .collect();
        Self { by_advertiser }
    }

    pub fn advertisers(&self) -> impl Iterator<Item = u32> + '_ {
        self.by_advertiser.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.by_advertiser
            .values()
            .map(|v| v.iter().filter(|(p, _)| !p.is_nan()).count())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<T: Scalar> ResponseSource<T> for UrfTable<T> {
    fn responses(&self, idx: usize, _: &AuctionRecord<T>, advertiser: u32) -> Option<(T, T)> {
        let (p, v) = *self.by_advertiser.get(&advertiser)?.get(idx)?;
        (!p.is_nan()).then_some((p, v))
    }
}

/// Multiplies every pctr of an inner source by a constant factor.
pub struct Disturbed<'a, S: ?Sized> {
    pub inner: &'a S,
    pub factor: f64,
}

impl<T: Scalar, S: ResponseSource<T> + ?Sized> ResponseSource<T> for Disturbed<'_, S> {
    fn responses(&self, idx: usize, rec: &AuctionRecord<T>, adv: u32) -> Option<(T, T)> {
        self.inner
            .responses(idx, rec, adv)
            .map(|(p, v)| (p * T::lit(self.factor), v))
    }
}

/// Immutable replay index for one log day.
#[derive(Debug, Clone)]
pub struct LogIndex<T = f64> {
    records: Vec<AuctionRecord<T>>,
    tag_users: HashMap<u32, Vec<u32>>,
    user_auctions: HashMap<u32, Vec<u32>>,
    urf: UrfTable<T>,
    scale_factor: T,
}

impl<T: Scalar> LogIndex<T> {
    /// Builds the index. With `sampled_only` the unmarked records are dropped
    /// (replay over the down-sampled bucket); otherwise every record is kept
    /// (the full log used by the ground-truth simulator).
    pub fn build(
        records: impl IntoIterator<Item = AuctionRecord<T>>,
        uts: &[UtsRecord],
        sampled_only: bool,
        scale_factor: T,
    ) -> Result<Self> {
        if !(scale_factor.is_finite() && scale_factor >= T::one()) {
            return Err(Error::Config(format!(
                "scale factor must be >= 1, got {scale_factor}"
            )));
        }
        let mut records: Vec<_> = records
            .into_iter()
            .filter(|r| !sampled_only || r.sampled)
            .collect();
        records.sort_by_key(|r| r.request_id);
        if records.windows(2).any(|w| w[0].request_id == w[1].request_id) {
            return Err(Error::DataIntegrity("duplicate request_id in auction log".into()));
        }
        let mut tag_users: HashMap<u32, Vec<u32>> = HashMap::new();
        for e in uts {
            tag_users.entry(e.tag_id).or_default().push(e.user_id);
        }
        for users in tag_users.values_mut() {
            users.sort_unstable();
            users.dedup();
        }
        let mut user_auctions: HashMap<u32, Vec<u32>> = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            user_auctions.entry(r.user_id).or_default().push(i as u32);
        }
        Ok(Self {
            records,
            tag_users,
            user_auctions,
            urf: UrfTable::default(),
            scale_factor,
        })
    }

    /// Attaches the URF log. Records for requests outside the index are ignored.
    pub fn with_urf(mut self, urf: &[UrfRecord<T>]) -> Result<Self> {
        let pos: HashMap<u64, usize> = self
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.request_id, i))
            .collect();
        let n = self.records.len();
        let mut table: BTreeMap<u32, Vec<(T, T)>> = BTreeMap::new();
        for u in urf {
            let Some(&i) = pos.get(&u.request_id) else {
                continue;
            };
            let row = table
                .entry(u.advertiser_id)
                .or_insert_with(|| vec![(T::nan(), T::nan()); n]);
            row[i] = (u.pctr, u.pcvr);
        }
        self.urf = UrfTable {
            by_advertiser: table,
        };
        Ok(self)
    }

    pub fn records(&self) -> &[AuctionRecord<T>] {
        &self.records
    }

    pub fn urf(&self) -> &UrfTable<T> {
        &self.urf
    }

    pub fn scale_factor(&self) -> T {
        self.scale_factor
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn tag_users(&self, tag: u32) -> &[u32] {
        self.tag_users.get(&tag).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn tags(&self) -> impl Iterator<Item = u32> + '_ {
        self.tag_users.keys().copied()
    }

    pub fn user_auctions(&self, user: u32) -> &[u32] {
        self.user_auctions.get(&user).map(Vec::as_slice).unwrap_or(&[])
    }
}
