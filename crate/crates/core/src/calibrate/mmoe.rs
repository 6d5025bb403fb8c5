//! Multi-gate mixture-of-experts with hand-written backpropagation.
//!
//! Shapes (B rows, D inputs, N experts, E expert width, K tasks):
//! expert `Linear(D→E) → BatchNorm → act`, per-task gate
//! `softmax(W_g x)` with `W_g: N×D`, per-task tower `Linear(E→T) → act →
//! Linear(T→1)`. Matrices are row-major with the output dimension first.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::input::{FeatureStats, INPUT_DIM};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Identity => x,
        }
    }

    /// Derivative evaluated at the pre-activation value.
    #[inline]
    fn grad<T: Scalar>(self, pre: T) -> T {
        match self {
            Activation::Relu if pre <= T::zero() => T::zero(),
            _ => T::one(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MmoeConfig {
    pub input_dim: usize,
    pub n_experts: usize,
    pub expert_dim: usize,
    /// Width of the tower hidden layer; `None` makes towers a single linear map.
    pub tower_hidden: Option<usize>,
    pub n_tasks: usize,
    pub activation: Activation,
    pub batch_norm: bool,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for MmoeConfig {
    fn default() -> Self {
        Self {
            input_dim: INPUT_DIM,
            n_experts: 6,
            expert_dim: 64,
            tower_hidden: Some(32),
            n_tasks: 3,
            activation: Activation::Relu,
            batch_norm: true,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl MmoeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.n_experts == 0 || self.expert_dim == 0 || self.n_tasks == 0 {
            return Err(Error::Config("mmoe dimensions must be positive".into()));
        }
        if self.tower_hidden == Some(0) {
            return Err(Error::Config("tower_hidden must be positive".into()));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("invalid batch norm settings".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertParams<T> {
    pub w: Vec<T>,
    pub b: Vec<T>,
    /// Empty when batch norm is off.
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TowerParams<T> {
    /// Empty when the tower has no hidden layer.
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: Vec<T>,
}

/// Trainable parameters. Gradients use the same layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmoeParams<T> {
    pub experts: Vec<ExpertParams<T>>,
    pub gates: Vec<Vec<T>>,
    pub towers: Vec<TowerParams<T>>,
}

impl<T: Scalar> MmoeParams<T> {
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for e in &self.experts {
            out.extend([&e.w[..], &e.b[..], &e.gamma[..], &e.beta[..]]);
        }
        out.extend(self.gates.iter().map(|g| &g[..]));
        for t in &self.towers {
            out.extend([&t.w1[..], &t.b1[..], &t.w2[..], &t.b2[..]]);
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for e in &mut self.experts {
            out.extend([&mut e.w[..], &mut e.b[..], &mut e.gamma[..], &mut e.beta[..]]);
        }
        out.extend(self.gates.iter_mut().map(|g| &mut g[..]));
        for t in &mut self.towers {
            out.extend([&mut t.w1[..], &mut t.b1[..], &mut t.w2[..], &mut t.b2[..]]);
        }
        out
    }

    pub fn zeros_like(&self) -> Self {
        let z = |v: &Vec<T>| vec![T::zero(); v.len()];
        Self {
            experts: self
                .experts
                .iter()
                .map(|e| ExpertParams { w: z(&e.w), b: z(&e.b), gamma: z(&e.gamma), beta: z(&e.beta) })
                .collect(),
            gates: self.gates.iter().map(z).collect(),
            towers: self
                .towers
                .iter()
                .map(|t| TowerParams { w1: z(&t.w1), b1: z(&t.b1), w2: z(&t.w2), b2: z(&t.b2) })
                .collect(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Label transform applied before the regression loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetTransform {
    Log1p,
}

impl TargetTransform {
    pub fn forward<T: Scalar>(self, y: T) -> T {
        match self {
            TargetTransform::Log1p => y.max(T::zero()).ln_1p(),
        }
    }

    /// Maps a network output back to a non-negative forecast.
    pub fn inverse<T: Scalar>(self, z: T) -> T {
        match self {
            TargetTransform::Log1p => z.exp_m1().max(T::zero()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmoeModel<T = f64> {
    pub config: MmoeConfig,
    pub params: MmoeParams<T>,
    pub running: Vec<RunningStats<T>>,
    pub stats: FeatureStats<T>,
    pub target_transform: TargetTransform,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    rows: usize,
    train: bool,
    expert_hat: Vec<Vec<T>>,
    expert_pre: Vec<Vec<T>>,
    expert_out: Vec<Vec<T>>,
    expert_inv_std: Vec<Vec<T>>,
    batch_mean: Vec<Vec<T>>,
    batch_var: Vec<Vec<T>>,
    gates: Vec<Vec<T>>,
    mixed: Vec<Vec<T>>,
    tower_pre: Vec<Vec<T>>,
    tower_hidden: Vec<Vec<T>>,
    /// Network outputs in transformed space, one vector of `rows` per task.
    pub outputs: Vec<Vec<T>>,
}

fn affine<T: Scalar>(x: &[T], rows: usize, d: usize, w: &[T], out: usize, bias: Option<&[T]>) -> Vec<T> {
    let mut y = vec![T::zero(); rows * out];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        for o in 0..out {
            let wo = &w[o * d..(o + 1) * d];
            let mut acc = bias.map_or(T::zero(), |b| b[o]);
            for (a, b) in xr.iter().zip(wo) {
                acc += *a * *b;
            }
            y[r * out + o] = acc;
        }
    }
    y
}

/// `dW[o, j] += Σ_r dy[r, o] x[r, j]` and `db[o] += Σ_r dy[r, o]`.
fn affine_param_grad<T: Scalar>(
    dy: &[T],
    x: &[T],
    rows: usize,
    d: usize,
    out: usize,
    dw: &mut [T],
    db: Option<&mut [T]>,
) {
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        for o in 0..out {
            let g = dy[r * out + o];
            if g == T::zero() {
                continue;
            }
            for (w, a) in dw[o * d..(o + 1) * d].iter_mut().zip(xr) {
                *w += g * *a;
            }
        }
    }
    if let Some(db) = db {
        for r in 0..rows {
            for o in 0..out {
                db[o] += dy[r * out + o];
            }
        }
    }
}

/// `dx[r, j] = Σ_o dy[r, o] W[o, j]`.
fn affine_input_grad<T: Scalar>(dy: &[T], w: &[T], rows: usize, d: usize, out: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); rows * d];
    for r in 0..rows {
        let dxr = &mut dx[r * d..(r + 1) * d];
        for o in 0..out {
            let g = dy[r * out + o];
            for (a, wv) in dxr.iter_mut().zip(&w[o * d..(o + 1) * d]) {
                *a += g * *wv;
            }
        }
    }
    dx
}

fn glorot<T: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Vec<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_in * fan_out).map(|_| T::lit(rng.random_range(-a..a))).collect()
}

impl<T: Scalar> MmoeModel<T> {
    /// Glorot-uniform weights, zero biases, unit batch-norm scale.
    pub fn init(config: MmoeConfig, stats: FeatureStats<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, e) = (config.input_dim, config.expert_dim);
        let bn = |v: f64| if config.batch_norm { vec![T::lit(v); e] } else { Vec::new() };
        let experts = (0..config.n_experts)
            .map(|_| ExpertParams {
                w: glorot(&mut rng, d, e),
                b: vec![T::zero(); e],
                gamma: bn(1.0),
                beta: bn(0.0),
            })
            .collect();
        let gates = (0..config.n_tasks).map(|_| glorot(&mut rng, d, config.n_experts)).collect();
        let towers = (0..config.n_tasks)
            .map(|_| match config.tower_hidden {
                Some(h) => TowerParams {
                    w1: glorot(&mut rng, e, h),
                    b1: vec![T::zero(); h],
                    w2: glorot(&mut rng, h, 1),
                    b2: vec![T::zero()],
                },
                None => TowerParams {
                    w1: Vec::new(),
                    b1: Vec::new(),
                    w2: glorot(&mut rng, e, 1),
                    b2: vec![T::zero()],
                },
            })
            .collect();
        let running = (0..config.n_experts)
            .map(|_| RunningStats { mean: vec![T::zero(); e], var: vec![T::one(); e] })
            .collect();
        Ok(Self {
            config,
            params: MmoeParams { experts, gates, towers },
            running,
            stats,
            target_transform: TargetTransform::Log1p,
        })
    }

    pub fn n_tasks(&self) -> usize {
        self.config.n_tasks
    }

    /// Structural checks after deserialization.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let p = &self.params;
        let (d, e) = (c.input_dim, c.expert_dim);
        let bn_len = if c.batch_norm { e } else { 0 };
        let bad = p.experts.len() != c.n_experts
            || p.gates.len() != c.n_tasks
            || p.towers.len() != c.n_tasks
            || self.running.len() != c.n_experts
            || p.experts.iter().any(|x| {
                x.w.len() != d * e || x.b.len() != e || x.gamma.len() != bn_len || x.beta.len() != bn_len
            })
            || p.gates.iter().any(|g| g.len() != c.n_experts * d)
            || self.running.iter().any(|r| r.mean.len() != e || r.var.len() != e)
            || p.towers.iter().any(|t| match c.tower_hidden {
                Some(h) => t.w1.len() != h * e || t.b1.len() != h || t.w2.len() != h || t.b2.len() != 1,
                None => !t.w1.is_empty() || t.w2.len() != e || t.b2.len() != 1,
            });
        if bad {
            return Err(Error::Config("mmoe parameter shapes disagree with config".into()));
        }
        if !p.all_finite() {
            return Err(Error::Numeric("non-finite mmoe parameter".into()));
        }
        Ok(())
    }

    /// Forward pass over `rows` inputs stored row-major in `x`.
    ///
    /// With `train` set, batch norm normalizes with batch statistics;
    /// otherwise with the running estimates.
    pub fn forward(&self, x: &[T], rows: usize, train: bool) -> Result<ForwardCache<T>> {
        let c = &self.config;
        let (d, e, n) = (c.input_dim, c.expert_dim, c.n_experts);
        if x.len() != rows * d {
            return Err(Error::DimensionMismatch { expected: rows * d, got: x.len() });
        }
        let act = c.activation;
        let eps = T::lit(c.bn_eps);
        let rows_t = T::from_usize_lossy(rows);

        let mut cache = ForwardCache {
            rows,
            train,
            expert_hat: Vec::with_capacity(n),
            expert_pre: Vec::with_capacity(n),
            expert_out: Vec::with_capacity(n),
            expert_inv_std: Vec::with_capacity(n),
            batch_mean: Vec::new(),
            batch_var: Vec::new(),
            gates: Vec::with_capacity(c.n_tasks),
            mixed: Vec::with_capacity(c.n_tasks),
            tower_pre: Vec::with_capacity(c.n_tasks),
            tower_hidden: Vec::with_capacity(c.n_tasks),
            outputs: Vec::with_capacity(c.n_tasks),
        };

        for (ei, ep) in self.params.experts.iter().enumerate() {
            let h = affine(x, rows, d, &ep.w, e, Some(&ep.b));
            let (hat, pre, inv) = if c.batch_norm {
                let (mean, var) = if train {
                    let mut mean = vec![T::zero(); e];
                    for r in 0..rows {
                        for j in 0..e {
                            mean[j] += h[r * e + j];
                        }
                    }
                    mean.iter_mut().for_each(|m| *m /= rows_t);
                    let mut var = vec![T::zero(); e];
                    for r in 0..rows {
                        for j in 0..e {
                            let dv = h[r * e + j] - mean[j];
                            var[j] += dv * dv;
                        }
                    }
                    var.iter_mut().for_each(|v| *v /= rows_t);
                    (mean, var)
                } else {
                    (self.running[ei].mean.clone(), self.running[ei].var.clone())
                };
                let inv: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
                let mut hat = vec![T::zero(); rows * e];
                let mut pre = vec![T::zero(); rows * e];
                for r in 0..rows {
                    for j in 0..e {
                        let k = r * e + j;
                        hat[k] = (h[k] - mean[j]) * inv[j];
                        pre[k] = ep.gamma[j] * hat[k] + ep.beta[j];
                    }
                }
                if train {
                    cache.batch_mean.push(mean);
                    cache.batch_var.push(var);
                }
                (hat, pre, inv)
            } else {
                (Vec::new(), h, Vec::new())
            };
            cache.expert_out.push(pre.iter().map(|v| act.apply(*v)).collect());
            cache.expert_hat.push(hat);
            cache.expert_pre.push(pre);
            cache.expert_inv_std.push(inv);
        }

        for (gw, tower) in self.params.gates.iter().zip(&self.params.towers) {
            let mut g = affine(x, rows, d, gw, n, None);
            for r in 0..rows {
                softmax_in_place(&mut g[r * n..(r + 1) * n]);
            }
            let mut f = vec![T::zero(); rows * e];
            for (ei, out) in cache.expert_out.iter().enumerate() {
                for r in 0..rows {
                    let w = g[r * n + ei];
                    for j in 0..e {
                        f[r * e + j] += w * out[r * e + j];
                    }
                }
            }
            let (zpre, z, y) = match c.tower_hidden {
                Some(th) => {
                    let zpre = affine(&f, rows, e, &tower.w1, th, Some(&tower.b1));
                    let z: Vec<T> = zpre.iter().map(|v| act.apply(*v)).collect();
                    let y = affine(&z, rows, th, &tower.w2, 1, Some(&tower.b2));
                    (zpre, z, y)
                }
                None => (Vec::new(), Vec::new(), affine(&f, rows, e, &tower.w2, 1, Some(&tower.b2))),
            };
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("non-finite mmoe output".into()));
            }
            cache.gates.push(g);
            cache.mixed.push(f);
            cache.tower_pre.push(zpre);
            cache.tower_hidden.push(z);
            cache.outputs.push(y);
        }
        Ok(cache)
    }

    /// Gate weights of task `k` for each row, from a forward cache.
    pub fn gate_weights<'c>(&self, cache: &'c ForwardCache<T>, k: usize) -> &'c [T] {
        &cache.gates[k]
    }

    /// Gradient of a loss given its derivative with respect to each output.
    pub fn backward(&self, x: &[T], cache: &ForwardCache<T>, d_out: &[Vec<T>]) -> MmoeParams<T> {
        let c = &self.config;
        let (d, e, n, rows) = (c.input_dim, c.expert_dim, c.n_experts, cache.rows);
        let act = c.activation;
        let mut grad = self.params.zeros_like();
        let mut d_expert_out = vec![vec![T::zero(); rows * e]; n];

        for k in 0..c.n_tasks {
            let tower = &self.params.towers[k];
            let tg = &mut grad.towers[k];
            let dy = &d_out[k];
            let f = &cache.mixed[k];
            let df = match c.tower_hidden {
                Some(th) => {
                    let z = &cache.tower_hidden[k];
                    affine_param_grad(dy, z, rows, th, 1, &mut tg.w2, Some(&mut tg.b2));
                    let dz = affine_input_grad(dy, &tower.w2, rows, th, 1);
                    let dzpre: Vec<T> = dz
                        .iter()
                        .zip(&cache.tower_pre[k])
                        .map(|(g, p)| *g * act.grad(*p))
                        .collect();
                    affine_param_grad(&dzpre, f, rows, e, th, &mut tg.w1, Some(&mut tg.b1));
                    affine_input_grad(&dzpre, &tower.w1, rows, e, th)
                }
                None => {
                    affine_param_grad(dy, f, rows, e, 1, &mut tg.w2, Some(&mut tg.b2));
                    affine_input_grad(dy, &tower.w2, rows, e, 1)
                }
            };

            let g = &cache.gates[k];
            let mut dlogit = vec![T::zero(); rows * n];
            for r in 0..rows {
                let dfr = &df[r * e..(r + 1) * e];
                let mut dg = vec![T::zero(); n];
                for (ei, out) in cache.expert_out.iter().enumerate() {
                    let w = g[r * n + ei];
                    let outr = &out[r * e..(r + 1) * e];
                    let dor = &mut d_expert_out[ei][r * e..(r + 1) * e];
                    let mut acc = T::zero();
                    for j in 0..e {
                        dor[j] += w * dfr[j];
                        acc += dfr[j] * outr[j];
                    }
                    dg[ei] = acc;
                }
                let dot: T = (0..n).map(|ei| g[r * n + ei] * dg[ei]).sum();
                for ei in 0..n {
                    dlogit[r * n + ei] = g[r * n + ei] * (dg[ei] - dot);
                }
            }
            affine_param_grad(&dlogit, x, rows, d, n, &mut grad.gates[k], None);
        }

        let rows_t = T::from_usize_lossy(rows);
        for (ei, ep) in self.params.experts.iter().enumerate() {
            let eg = &mut grad.experts[ei];
            let dpre: Vec<T> = d_expert_out[ei]
                .iter()
                .zip(&cache.expert_pre[ei])
                .map(|(g, p)| *g * act.grad(*p))
                .collect();
            let dh = if c.batch_norm {
                let hat = &cache.expert_hat[ei];
                let inv = &cache.expert_inv_std[ei];
                let mut ghat = vec![T::zero(); rows * e];
                for r in 0..rows {
                    for j in 0..e {
                        let k = r * e + j;
                        eg.gamma[j] += dpre[k] * hat[k];
                        eg.beta[j] += dpre[k];
                        ghat[k] = dpre[k] * ep.gamma[j];
                    }
                }
                let mut dh = vec![T::zero(); rows * e];
                if cache.train {
                    let mut sum_g = vec![T::zero(); e];
                    let mut sum_gh = vec![T::zero(); e];
                    for r in 0..rows {
                        for j in 0..e {
                            sum_g[j] += ghat[r * e + j];
                            sum_gh[j] += ghat[r * e + j] * hat[r * e + j];
                        }
                    }
                    for r in 0..rows {
                        for j in 0..e {
                            let k = r * e + j;
                            dh[k] = inv[j] / rows_t * (rows_t * ghat[k] - sum_g[j] - hat[k] * sum_gh[j]);
                        }
                    }
                } else {
                    for r in 0..rows {
                        for j in 0..e {
                            dh[r * e + j] = ghat[r * e + j] * inv[j];
                        }
                    }
                }
                dh
            } else {
                dpre
            };
            affine_param_grad(&dh, x, rows, d, e, &mut eg.w, Some(&mut eg.b));
        }
        grad
    }

    /// Moves the running batch-norm estimates toward the statistics of a
    /// training-mode forward pass. Variance uses the unbiased estimate.
    pub fn update_running(&mut self, cache: &ForwardCache<T>) {
        if !self.config.batch_norm || !cache.train {
            return;
        }
        let m = T::lit(self.config.bn_momentum);
        let rows = cache.rows;
        let unbias = if rows > 1 {
            T::from_usize_lossy(rows) / T::from_usize_lossy(rows - 1)
        } else {
            T::one()
        };
        for (rs, (bm, bv)) in self.running.iter_mut().zip(cache.batch_mean.iter().zip(&cache.batch_var)) {
            for j in 0..rs.mean.len() {
                rs.mean[j] = (T::one() - m) * rs.mean[j] + m * bm[j];
                rs.var[j] = (T::one() - m) * rs.var[j] + m * bv[j] * unbias;
            }
        }
    }

    /// Inference-mode outputs in transformed space, `[task][row]`.
    pub fn predict_transformed(&self, x: &[T], rows: usize) -> Result<Vec<Vec<T>>> {
        Ok(self.forward(x, rows, false)?.outputs)
    }

    /// Inference-mode forecasts on the original label scale, `[row][task]`.
    pub fn predict(&self, x: &[T], rows: usize) -> Result<Vec<Vec<T>>> {
        let out = self.predict_transformed(x, rows)?;
        Ok((0..rows)
            .map(|r| out.iter().map(|o| self.target_transform.inverse(o[r])).collect())
            .collect())
    }

    /// Single-task model sharing this model's experts, the gate and tower of
    /// task `k`.
    pub fn restrict(&self, k: usize) -> Result<Self> {
        if k >= self.config.n_tasks {
            return Err(Error::Contract(format!("task {k} out of range")));
        }
        let mut out = self.clone();
        out.config.n_tasks = 1;
        out.params.gates = vec![self.params.gates[k].clone()];
        out.params.towers = vec![self.params.towers[k].clone()];
        Ok(out)
    }
}

fn softmax_in_place<T: Scalar>(v: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Equal-weight sum over tasks of the mean squared error, and its
/// derivative with respect to each output.
pub fn mse_loss<T: Scalar>(outputs: &[Vec<T>], targets: &[Vec<T>]) -> (T, Vec<Vec<T>>) {
    let mut loss = T::zero();
    let mut grads = Vec::with_capacity(outputs.len());
    for (y, t) in outputs.iter().zip(targets) {
        let b = T::from_usize_lossy(y.len());
        let two = T::lit(2.0);
        let mut g = Vec::with_capacity(y.len());
        for (a, b_) in y.iter().zip(t) {
            let r = *a - *b_;
            loss += r * r / b;
            g.push(two * r / b);
        }
        grads.push(g);
    }
    (loss, grads)
}

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `‖a − n‖ / (‖a‖ + ‖n‖)` over the checked coordinates.
    pub rel_error: f64,
    /// Largest `|a − n| / max(|a|, |n|, floor)` over checked coordinates.
    pub max_rel_error: f64,
    pub max_abs_diff: f64,
    pub checked: usize,
}

/// Gradients smaller than this are compared in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Central-difference check of `backward` under the MSE loss.
///
/// `max_coords` bounds the number of parameters perturbed; coordinates are
/// drawn uniformly without replacement using `seed`.
pub fn gradient_check(
    model: &MmoeModel<f64>,
    x: &[f64],
    rows: usize,
    targets: &[Vec<f64>],
    train: bool,
    eps: f64,
    max_coords: Option<usize>,
    seed: u64,
) -> Result<GradCheck> {
    let cache = model.forward(x, rows, train)?;
    let (_, dy) = mse_loss(&cache.outputs, targets);
    let analytic = model.backward(x, &cache, &dy);
    let flat_a: Vec<f64> = analytic.slices().iter().flat_map(|s| s.iter().copied()).collect();

    let total = flat_a.len();
    let mut coords: Vec<usize> = (0..total).collect();
    if let Some(m) = max_coords.filter(|m| *m < total) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..m {
            let j = rng.random_range(i..total);
            coords.swap(i, j);
        }
        coords.truncate(m);
        coords.sort_unstable();
    }

    let loss_at = |m: &MmoeModel<f64>| -> Result<f64> {
        let c = m.forward(x, rows, train)?;
        Ok(mse_loss(&c.outputs, targets).0)
    };
    let mut probe = model.clone();
    let (mut num2, mut a2, mut n2, mut max_abs, mut max_rel) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for &ci in &coords {
        let orig = get_flat(&probe.params, ci);
        set_flat(&mut probe.params, ci, orig + eps);
        let lp = loss_at(&probe)?;
        set_flat(&mut probe.params, ci, orig - eps);
        let lm = loss_at(&probe)?;
        set_flat(&mut probe.params, ci, orig);
        let numeric = (lp - lm) / (2.0 * eps);
        let diff = flat_a[ci] - numeric;
        num2 += diff * diff;
        a2 += flat_a[ci] * flat_a[ci];
        n2 += numeric * numeric;
        max_abs = max_abs.max(diff.abs());
        max_rel = max_rel.max(diff.abs() / flat_a[ci].abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR));
    }
    let denom = a2.sqrt() + n2.sqrt();
    Ok(GradCheck {
        rel_error: if denom > 0.0 { num2.sqrt() / denom } else { 0.0 },
        max_rel_error: max_rel,
        max_abs_diff: max_abs,
        checked: coords.len(),
    })
}

fn locate(params: &MmoeParams<f64>, mut i: usize) -> (usize, usize) {
    for (si, s) in params.slices().iter().enumerate() {
        if i < s.len() {
            return (si, i);
        }
        i -= s.len();
    }
    panic!("flat parameter index out of range");
}

fn get_flat(params: &MmoeParams<f64>, i: usize) -> f64 {
    let (s, j) = locate(params, i);
    params.slices()[s][j]
}

fn set_flat(params: &mut MmoeParams<f64>, i: usize, v: f64) {
    let (s, j) = locate(params, i);
    params.slices_mut()[s][j] = v;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrate::input::N_DENSE;

    fn stats(dim: usize) -> FeatureStats<f64> {
        FeatureStats { mean: vec![0.0; dim.min(N_DENSE)], std: vec![1.0; dim.min(N_DENSE)] }
    }

    fn small_config(d: usize) -> MmoeConfig {
        MmoeConfig {
            input_dim: d,
            n_experts: 3,
            expert_dim: 5,
            tower_hidden: Some(4),
            n_tasks: 2,
            ..MmoeConfig::default()
        }
    }

    fn random_rows(rows: usize, d: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..rows * d).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    fn randomize_bn(m: &mut MmoeModel<f64>, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (e, rs) in m.params.experts.iter_mut().zip(m.running.iter_mut()) {
            e.gamma.iter_mut().for_each(|g| *g = rng.random_range(0.5..1.5));
            e.beta.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
            e.b.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
            rs.mean.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
            rs.var.iter_mut().for_each(|v| *v = rng.random_range(0.5..2.0));
        }
    }

    #[test]
    fn gates_lie_on_the_simplex() {
        let cfg = MmoeConfig::default();
        let d = cfg.input_dim;
        let m = MmoeModel::init(cfg, stats(d), 1).unwrap();
        let x = random_rows(64, d, 2);
        let cache = m.forward(&x, 64, false).unwrap();
        for k in 0..m.n_tasks() {
            for row in m.gate_weights(&cache, k).chunks(m.config.n_experts) {
                assert!(row.iter().all(|g| *g >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn equal_gate_logits_average_the_experts() {
        let cfg = MmoeConfig { tower_hidden: None, batch_norm: false, ..small_config(4) };
        let mut m = MmoeModel::init(cfg, stats(4), 3).unwrap();
        m.params.gates.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v = 0.0));
        let x = random_rows(3, 4, 4);
        let cache = m.forward(&x, 3, false).unwrap();
        let e = m.config.expert_dim;
        for r in 0..3 {
            for j in 0..e {
                let avg = cache.expert_out.iter().map(|o| o[r * e + j]).sum::<f64>() / 3.0;
                assert!((cache.mixed[0][r * e + j] - avg).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hand_computed_two_expert_forward() {
        // D = 1, two 1-wide relu experts, tower with one hidden unit.
        let cfg = MmoeConfig {
            input_dim: 1,
            n_experts: 2,
            expert_dim: 1,
            tower_hidden: Some(1),
            n_tasks: 1,
            activation: Activation::Relu,
            batch_norm: false,
            ..MmoeConfig::default()
        };
        let mut m = MmoeModel::init(cfg, stats(1), 0).unwrap();
        m.params.experts[0].w = vec![2.0];
        m.params.experts[0].b = vec![0.5];
        m.params.experts[1].w = vec![-1.0];
        m.params.experts[1].b = vec![3.0];
        m.params.gates[0] = vec![3f64.ln(), 0.0];
        m.params.towers[0].w1 = vec![0.5];
        m.params.towers[0].b1 = vec![-0.25];
        m.params.towers[0].w2 = vec![4.0];
        m.params.towers[0].b2 = vec![1.0];
        // x = 1: experts 2.5 and 2; gate softmax(ln 3, 0) = (3/4, 1/4);
        // mixed 2.375; hidden relu(1.1875 - 0.25) = 0.9375; y = 4.75.
        let y = m.predict_transformed(&[1.0], 1).unwrap();
        assert!((y[0][0] - 4.75).abs() < 1e-12);
        let p = m.predict(&[1.0], 1).unwrap();
        assert!((p[0][0] - 4.75f64.exp_m1()).abs() < 1e-9);
        // x = -4: experts relu(-7.5) = 0 and 7; gate softmax(-4 ln 3, 0) = (1/82, 81/82).
        let mixed = 81.0 / 82.0 * 7.0;
        let expect = 4.0 * (0.5 * mixed - 0.25) + 1.0;
        let y = m.predict_transformed(&[-4.0], 1).unwrap();
        assert!((y[0][0] - expect).abs() < 1e-12);
    }

    #[test]
    fn untrained_near_zero_model_outputs_expm1_of_bias() {
        let mut m = MmoeModel::init(small_config(4), stats(4), 2).unwrap();
        for s in m.params.slices_mut() {
            s.iter_mut().for_each(|v| *v *= 1e-9);
        }
        for (k, t) in m.params.towers.iter_mut().enumerate() {
            t.b2[0] = 0.3 * k as f64 - 0.2;
        }
        let x = random_rows(10, 4, 3);
        for row in m.predict(&x, 10).unwrap() {
            for (k, v) in row.iter().enumerate() {
                let b: f64 = 0.3 * k as f64 - 0.2;
                assert!(v.is_finite() && *v >= 0.0);
                assert!((v - b.exp_m1().max(0.0)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn inference_ignores_batch_composition() {
        let mut m = MmoeModel::init(small_config(5), stats(5), 4).unwrap();
        randomize_bn(&mut m, 5);
        let x = random_rows(12, 5, 6);
        let all = m.predict(&x, 12).unwrap();
        for r in 0..12 {
            let one = m.predict(&x[r * 5..(r + 1) * 5], 1).unwrap();
            assert_eq!(one[0], all[r]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_in_both_modes() {
        let d = 6;
        for seed in 0..4 {
            let mut m = MmoeModel::init(small_config(d), stats(d), seed).unwrap();
            randomize_bn(&mut m, seed + 100);
            let x = random_rows(7, d, seed + 200);
            let t = vec![random_rows(7, 1, seed + 300), random_rows(7, 1, seed + 400)];
            for train in [true, false] {
                let gc = gradient_check(&m, &x, 7, &t, train, 1e-5, None, 0).unwrap();
                assert!(gc.max_rel_error < 1e-4, "seed {seed} train {train}: {gc:?}");
                assert_eq!(gc.checked, m.params.n_params());
            }
        }
    }

    #[test]
    fn linear_model_gradient_is_nearly_exact() {
        let cfg = MmoeConfig {
            activation: Activation::Identity,
            batch_norm: false,
            tower_hidden: None,
            ..small_config(5)
        };
        let m = MmoeModel::init(cfg, stats(5), 9).unwrap();
        let x = random_rows(6, 5, 10);
        let t = vec![random_rows(6, 1, 11), random_rows(6, 1, 12)];
        let gc = gradient_check(&m, &x, 6, &t, false, 1e-5, None, 0).unwrap();
        assert!(gc.max_abs_diff < 1e-8 && gc.rel_error < 1e-8, "{gc:?}");
    }

    #[test]
    fn zero_loss_gives_zero_gradient() {
        let d = 4;
        let m = MmoeModel::init(small_config(d), stats(d), 5).unwrap();
        let x = random_rows(5, d, 6);
        let cache = m.forward(&x, 5, true).unwrap();
        let targets = cache.outputs.clone();
        let (loss, dy) = mse_loss(&cache.outputs, &targets);
        assert_eq!(loss, 0.0);
        let g = m.backward(&x, &cache, &dy);
        assert!(g.slices().iter().all(|s| s.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn restricted_model_reproduces_its_task() {
        let cfg = MmoeConfig { n_tasks: 3, ..small_config(6) };
        let mut m = MmoeModel::init(cfg, stats(6), 21).unwrap();
        randomize_bn(&mut m, 22);
        let x = random_rows(9, 6, 23);
        let full = m.predict_transformed(&x, 9).unwrap();
        for k in 0..3 {
            let single = m.restrict(k).unwrap().predict_transformed(&x, 9).unwrap();
            assert_eq!(single.len(), 1);
            for (a, b) in single[0].iter().zip(&full[k]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(m.restrict(3).is_err());
    }

    #[test]
    fn f32_forward_agrees_with_f64() {
        let cfg = small_config(4);
        let m64 = MmoeModel::init(cfg.clone(), stats(4), 31).unwrap();
        let m32: MmoeModel<f32> =
            serde_json::from_value(serde_json::to_value(&m64).unwrap()).unwrap();
        let x64 = random_rows(4, 4, 32);
        let x32: Vec<f32> = x64.iter().map(|v| *v as f32).collect();
        let a = m64.predict_transformed(&x64, 4).unwrap();
        let b = m32.predict_transformed(&x32, 4).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            for (va, vb) in ra.iter().zip(rb) {
                assert!((va - *vb as f64).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn shape_validation_and_dimension_errors() {
        let m = MmoeModel::init(small_config(4), stats(4), 1).unwrap();
        m.validate().unwrap();
        assert!(matches!(m.forward(&[0.0; 5], 2, false), Err(Error::DimensionMismatch { .. })));
        let mut broken = m.clone();
        broken.params.gates[0].pop();
        assert!(broken.validate().is_err());
        let mut nan = m;
        nan.params.towers[0].b2[0] = f64::NAN;
        assert!(matches!(nan.validate(), Err(Error::Numeric(_))));
    }
}
