use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{ActionSample, FmInput, Vocabulary, N_DENSE};
use super::fm::{logloss_grad, UrfModel};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UrfHyper {
    pub k: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Standard deviation of the initial factor entries.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for UrfHyper {
    fn default() -> Self {
        Self {
            k: 8,
            lr: 1e-3,
            epochs: 10,
            batch_size: 256,
            init_scale: 0.01,
            seed: 0,
        }
    }
}

/// Mean training log loss per epoch.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epoch_loss: Vec<f64>,
}

/// Fits an FM by minibatch Adam on log loss. Deterministic for a fixed seed.
pub fn train_urf<T: Scalar>(
    samples: &[ActionSample<T>],
    hyper: &UrfHyper,
) -> Result<(UrfModel<T>, TrainTrace)> {
    let n_pos = samples.iter().filter(|s| s.label).count();
    if n_pos == 0 || n_pos == samples.len() {
        return Err(Error::DegenerateLabels(format!(
            "{n_pos} positives out of {} samples",
            samples.len()
        )));
    }
    if hyper.k == 0 || hyper.batch_size == 0 || hyper.epochs == 0 {
        return Err(Error::Config("k, batch_size and epochs must be positive".into()));
    }
    let vocab = Vocabulary::fit(samples);
    let mut model = UrfModel::zeros(vocab, hyper.k, N_DENSE);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    for f in model.factors.iter_mut() {
        // uniform with the requested standard deviation
        *f = T::lit((rng.random::<f64>() - 0.5) * hyper.init_scale * 12f64.sqrt());
    }
    let base_rate = n_pos as f64 / samples.len() as f64;
    model.bias = T::lit((base_rate / (1.0 - base_rate)).ln());

    let encoded: Vec<(FmInput<T>, bool)> = samples
        .iter()
        .map(|s| Ok((model.vocab.encode(&s.fields, &s.dense)?, s.label)))
        .collect::<Result<_>>()?;

    let mut opt = Adam::new(
        AdamConfig {
            lr: hyper.lr,
            ..AdamConfig::default()
        },
        [1, model.linear.len(), model.factors.len(), model.dense.len()],
    );
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut trace = TrainTrace::default();
    let mut batch = Vec::with_capacity(hyper.batch_size);
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| encoded[i].clone()));
            let (loss, grad) = logloss_grad(&model, &batch);
            epoch_loss += loss.as_f64() * chunk.len() as f64;
            let bias_grad = [grad.bias];
            let mut bias = [model.bias];
            opt.step(
                vec![&mut bias, &mut model.linear, &mut model.factors, &mut model.dense],
                vec![&bias_grad, &grad.linear, &grad.factors, &grad.dense],
            );
            model.bias = bias[0];
        }
        trace.epoch_loss.push(epoch_loss / encoded.len() as f64);
    }
    if model.linear.iter().chain(&model.factors).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("FM training diverged".into()));
    }
    Ok((model, trace))
}
