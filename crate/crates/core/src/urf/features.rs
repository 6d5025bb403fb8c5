//! Featurization of (request context, advertiser) pairs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::synthlog::records::ActionRecord;
use crate::synthlog::world::{Context, Field, World};

pub const N_FIELDS: usize = Field::ALL.len();
pub const N_DENSE: usize = 2;

/// Raw categorical values per field plus dense interaction features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSample<T = f64> {
    pub fields: [u32; N_FIELDS],
    /// ln(1 + browse), ln(1 + buy) between the user and the advertiser.
    pub dense: [T; N_DENSE],
    pub label: bool,
}

/// Feature vector in model index space.
#[derive(Debug, Clone, PartialEq)]
pub struct FmInput<T = f64> {
    /// Active one-hot index per field (including OOV slots).
    pub sparse: Vec<usize>,
    pub dense: Vec<T>,
}

/// Per-field sorted value lists; each field also owns one OOV slot placed
/// after its known values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub fields: Vec<String>,
    pub values: Vec<Vec<u32>>,
}

impl Vocabulary {
    pub fn fit<'a, T: 'a>(samples: impl IntoIterator<Item = &'a ActionSample<T>>) -> Self {
        let mut values: Vec<Vec<u32>> = vec![Vec::new(); N_FIELDS];
        for s in samples {
            for (f, v) in s.fields.iter().enumerate() {
                values[f].push(*v);
            }
        }
        for v in values.iter_mut() {
            v.sort_unstable();
            v.dedup();
        }
        Self {
            fields: Field::ALL.iter().map(|f| f.name().to_string()).collect(),
            values,
        }
    }

    /// Total one-hot width, OOV slots included.
    pub fn size(&self) -> usize {
        self.values.iter().map(|v| v.len() + 1).sum()
    }

    pub fn n_fields(&self) -> usize {
        self.values.len()
    }

    pub fn encode<T: Scalar>(&self, fields: &[u32], dense: &[T]) -> Result<FmInput<T>> {
        if fields.len() != self.values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.values.len(),
                got: fields.len(),
            });
        }
        let mut offset = 0;
        let sparse = fields
            .iter()
            .zip(&self.values)
            .map(|(v, known)| {
                let slot = known.binary_search(v).unwrap_or(known.len());
                let idx = offset + slot;
                offset += known.len() + 1;
                idx
            })
            .collect();
        Ok(FmInput {
            sparse,
            dense: dense.to_vec(),
        })
    }
}

/// Raw feature values of a context. Fails if the user or advertiser is unknown.
pub fn featurize<T: Scalar>(ctx: &Context, world: &World) -> Result<([u32; N_FIELDS], [T; N_DENSE])> {
    if world.user(ctx.user_id).is_none() {
        return Err(Error::Lookup(format!("unknown user_id {}", ctx.user_id)));
    }
    if world.advertiser(ctx.advertiser_id).is_none() {
        return Err(Error::Lookup(format!("unknown advertiser_id {}", ctx.advertiser_id)));
    }
    let slots = world
        .slots(ctx)
        .ok_or_else(|| Error::Lookup("context outside world".into()))?;
    let mut fields = [0u32; N_FIELDS];
    for (f, s) in fields.iter_mut().zip(slots) {
        *f = s as u32;
    }
    let d = world.dense_features(ctx.user_id, ctx.advertiser_id);
    Ok((fields, [T::lit(d[0]), T::lit(d[1])]))
}

/// Turns the action log into labelled samples for the click (`conversion =
/// false`) or conversion model.
pub fn action_samples<T: Scalar>(
    log: &[ActionRecord],
    world: &World,
    conversion: bool,
) -> Result<Vec<ActionSample<T>>> {
    log.iter()
        .map(|a| {
            let ctx = Context {
                user_id: a.user_id,
                advertiser_id: a.advertiser_id,
                hour: a.hour,
                adzone_id: a.adzone_id,
            };
            let (fields, dense) = featurize(&ctx, world)?;
            Ok(ActionSample {
                fields,
                dense,
                label: if conversion { a.conversion } else { a.click },
            })
        })
        .collect()
}
