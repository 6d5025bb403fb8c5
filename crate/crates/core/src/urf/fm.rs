//! Second-order factorization machine with a logistic link.

use serde::{Deserialize, Serialize};

use super::features::{FmInput, Vocabulary};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrfModel<T = f64> {
    pub vocab: Vocabulary,
    pub bias: T,
    /// One weight per one-hot slot.
    pub linear: Vec<T>,
    pub k: usize,
    /// Row-major `linear.len() × k`.
    pub factors: Vec<T>,
    /// Weights of the dense interaction-count features.
    pub dense: Vec<T>,
}

/// Gradient of some scalar w.r.t. every model parameter, same layout as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct FmGrad<T> {
    pub bias: T,
    pub linear: Vec<T>,
    pub factors: Vec<T>,
    pub dense: Vec<T>,
}

impl<T: Scalar> FmGrad<T> {
    pub fn zeros_like(m: &UrfModel<T>) -> Self {
        Self {
            bias: T::zero(),
            linear: vec![T::zero(); m.linear.len()],
            factors: vec![T::zero(); m.factors.len()],
            dense: vec![T::zero(); m.dense.len()],
        }
    }
}

pub(crate) fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> UrfModel<T> {
    pub fn zeros(vocab: Vocabulary, k: usize, n_dense: usize) -> Self {
        let n = vocab.size();
        Self {
            vocab,
            bias: T::zero(),
            linear: vec![T::zero(); n],
            k,
            factors: vec![T::zero(); n * k],
            dense: vec![T::zero(); n_dense],
        }
    }

    pub fn n_params(&self) -> usize {
        1 + self.linear.len() + self.factors.len() + self.dense.len()
    }

    fn check_input(&self, x: &FmInput<T>) -> Result<()> {
        if x.dense.len() != self.dense.len() {
            return Err(Error::DimensionMismatch {
                expected: self.dense.len(),
                got: x.dense.len(),
            });
        }
        if let Some(&i) = x.sparse.iter().find(|&&i| i >= self.linear.len()) {
            return Err(Error::DimensionMismatch {
                expected: self.linear.len(),
                got: i + 1,
            });
        }
        Ok(())
    }

    /// Pre-sigmoid score, using the O(k·n) sum-of-squares identity.
    pub fn logit(&self, x: &FmInput<T>) -> Result<T> {
        self.check_input(x)?;
        let z = self.logit_unchecked(x);
        if z.is_finite() {
            Ok(z)
        } else {
            Err(Error::Numeric("non-finite FM score; model has non-finite parameters".into()))
        }
    }

    fn logit_unchecked(&self, x: &FmInput<T>) -> T {
        let mut z = self.bias;
        for (w, v) in self.dense.iter().zip(&x.dense) {
            z += *w * *v;
        }
        for &i in &x.sparse {
            z += self.linear[i];
        }
        let half = T::lit(0.5);
        for d in 0..self.k {
            let mut sum = T::zero();
            let mut sq = T::zero();
            for &i in &x.sparse {
                let v = self.factors[i * self.k + d];
                sum += v;
                sq += v * v;
            }
            z += half * (sum * sum - sq);
        }
        z
    }

    pub fn predict(&self, x: &FmInput<T>) -> Result<T> {
        self.logit(x).map(sigmoid)
    }

    /// Encodes raw field values and predicts.
    pub fn predict_raw(&self, fields: &[u32], dense: &[T]) -> Result<T> {
        self.predict(&self.vocab.encode(fields, dense)?)
    }

    /// Adds `scale · ∂logit/∂θ` into `grad`.
    pub fn accumulate_logit_grad(&self, x: &FmInput<T>, scale: T, grad: &mut FmGrad<T>) {
        grad.bias += scale;
        for (g, v) in grad.dense.iter_mut().zip(&x.dense) {
            *g += scale * *v;
        }
        for &i in &x.sparse {
            grad.linear[i] += scale;
        }
        for d in 0..self.k {
            let sum: T = x.sparse.iter().map(|&i| self.factors[i * self.k + d]).sum();
            for &i in &x.sparse {
                grad.factors[i * self.k + d] += scale * (sum - self.factors[i * self.k + d]);
            }
        }
    }
}

/// Mean log loss of a batch and its gradient.
pub fn logloss_grad<T: Scalar>(
    model: &UrfModel<T>,
    batch: &[(FmInput<T>, bool)],
) -> (T, FmGrad<T>) {
    let mut grad = FmGrad::zeros_like(model);
    let n = T::from_usize_lossy(batch.len().max(1));
    let mut loss = T::zero();
    let eps = T::lit(1e-15);
    for (x, y) in batch {
        let p = sigmoid(model.logit_unchecked(x));
        let t = if *y { T::one() } else { T::zero() };
        loss -= if *y { p.max(eps).ln() } else { (T::one() - p).max(eps).ln() };
        model.accumulate_logit_grad(x, (p - t) / n, &mut grad);
    }
    (loss / n, grad)
}
