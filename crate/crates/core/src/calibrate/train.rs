//! Minibatch Adam training with early stopping on validation mape.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::input::{build_calib_input, FeatureStats};
use super::mmoe::{mse_loss, MmoeConfig, MmoeModel};
use super::{CalibrationSample, Indicator};
use crate::error::{Error, Result};
use crate::eval::metrics::weighted_mape;
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MmoeHyper {
    pub config: MmoeConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for MmoeHyper {
    fn default() -> Self {
        Self {
            config: MmoeConfig::default(),
            adam: AdamConfig::default(),
            batch_size: 256,
            max_epochs: 300,
            patience: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub valid_mape: Vec<f64>,
    pub best_epoch: usize,
}

/// Flattened inputs and transformed targets for a sample set.
pub(crate) struct Design<T> {
    pub x: Vec<T>,
    pub rows: usize,
    /// `[task][row]`, already passed through the target transform.
    pub targets: Vec<Vec<T>>,
}

pub(crate) fn design<T: Scalar>(
    samples: &[CalibrationSample<T>],
    tasks: &[Indicator],
    model: &MmoeModel<T>,
) -> Result<Design<T>> {
    let mut x = Vec::with_capacity(samples.len() * model.config.input_dim);
    for s in samples {
        let v = build_calib_input(&s.criteria, &s.replay, &model.stats)?.to_vec();
        if v.len() != model.config.input_dim {
            return Err(Error::DimensionMismatch { expected: model.config.input_dim, got: v.len() });
        }
        x.extend(v);
    }
    let targets = tasks
        .iter()
        .map(|t| {
            samples
                .iter()
                .map(|s| model.target_transform.forward(T::lit(t.of(&s.truth))))
                .collect()
        })
        .collect();
    Ok(Design { x, rows: samples.len(), targets })
}

/// Mean over tasks of the cost-weighted mape of inference-mode forecasts.
/// Tasks whose truth is zero everywhere are skipped.
pub(crate) fn validation_mape<T: Scalar>(
    model: &MmoeModel<T>,
    d: &Design<T>,
    samples: &[CalibrationSample<T>],
    tasks: &[Indicator],
) -> Result<f64> {
    let out = model.predict_transformed(&d.x, d.rows)?;
    let weight: Vec<f64> = samples.iter().map(|s| s.truth.cost).collect();
    let mut acc = Vec::new();
    for (k, t) in tasks.iter().enumerate() {
        let pred: Vec<f64> = out[k].iter().map(|z| model.target_transform.inverse(*z).as_f64()).collect();
        let truth: Vec<f64> = samples.iter().map(|s| t.of(&s.truth)).collect();
        match weighted_mape(&pred, &truth, &weight) {
            Ok(m) => acc.push(m.value),
            Err(Error::UndefinedMetric(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if acc.is_empty() {
        return Err(Error::UndefinedMetric("validation metric undefined for every task".into()));
    }
    Ok(acc.iter().sum::<f64>() / acc.len() as f64)
}

/// Trains one network whose towers predict `tasks` in order.
pub fn train_mmoe<T: Scalar>(
    train: &[CalibrationSample<T>],
    valid: &[CalibrationSample<T>],
    tasks: &[Indicator],
    hyper: &MmoeHyper,
) -> Result<(MmoeModel<T>, TrainReport)> {
    if tasks.is_empty() {
        return Err(Error::Config("at least one task is required".into()));
    }
    if hyper.batch_size < 2 {
        return Err(Error::Config("batch_size must be at least 2".into()));
    }
    if train.len() < hyper.batch_size {
        return Err(Error::InsufficientData(format!(
            "{} training samples, fewer than one batch of {}",
            train.len(),
            hyper.batch_size
        )));
    }
    if valid.is_empty() {
        return Err(Error::InsufficientData("empty validation split".into()));
    }
    let stats = FeatureStats::fit(train.iter().map(|s| &s.replay))?;
    let config = MmoeConfig { n_tasks: tasks.len(), ..hyper.config.clone() };
    let mut model = MmoeModel::init(config, stats, hyper.seed)?;
    let dt = design(train, tasks, &model)?;
    let dv = design(valid, tasks, &model)?;
    let d = model.config.input_dim;
    // Each tower starts as the best constant predictor: zero output weights,
    // bias at the mean transformed label.
    for (tower, t) in model.params.towers.iter_mut().zip(&dt.targets) {
        tower.w2.iter_mut().for_each(|w| *w = T::zero());
        tower.b2[0] = t.iter().copied().sum::<T>() / T::from_usize_lossy(t.len());
    }

    let mut adam = Adam::new(hyper.adam, model.params.slices().iter().map(|s| s.len()));
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x5eed_cafe);
    let mut order: Vec<usize> = (0..dt.rows).collect();
    let mut report = TrainReport::default();
    let mut best = (f64::INFINITY, model.clone());
    let mut since_best = 0;

    let mut xb = Vec::with_capacity(hyper.batch_size * d);
    for epoch in 0..hyper.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(hyper.batch_size) {
            // Batch norm needs at least two rows for a batch variance.
            if chunk.len() < 2 {
                continue;
            }
            xb.clear();
            for &i in chunk {
                xb.extend_from_slice(&dt.x[i * d..(i + 1) * d]);
            }
            let tb: Vec<Vec<T>> = dt.targets.iter().map(|t| chunk.iter().map(|&i| t[i]).collect()).collect();
            let cache = model.forward(&xb, chunk.len(), true)?;
            let (loss, dy) = mse_loss(&cache.outputs, &tb);
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite training loss at epoch {epoch}")));
            }
            let grad = model.backward(&xb, &cache, &dy);
            adam.step(model.params.slices_mut(), grad.slices());
            model.update_running(&cache);
            epoch_loss += loss.as_f64();
            batches += 1;
        }
        report.train_loss.push(epoch_loss / batches.max(1) as f64);

        let vm = validation_mape(&model, &dv, valid, tasks)?;
        report.valid_mape.push(vm);
        if vm < best.0 {
            best = (vm, model.clone());
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= hyper.patience {
                break;
            }
        }
    }
    Ok((best.1, report))
}
