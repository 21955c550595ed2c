//! Gradient training of the constrained one-dimensional attention model.
//!
//! With `W_Q = W_K = W_V = L` and `W_P = (1/n) L XᵀY` for a scalar `L`, the
//! forward pass collapses to `Ŷ(L) = (L⁴ s c / n²) X` where `s = XᵀX` and
//! `c = XᵀY`. The least-squares optimum is reached at
//! `L* = (s / n)^(-1/2)`, and Adam is used to see whether training finds it.

use serde::{Deserialize, Serialize};

use crate::attention::{forward, TransformerParams};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::ols::ols_fit;
use crate::rng::Rng;

/// Training aborts once `|L|` exceeds this.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// `|L|` below this counts as sitting on the flat point at the origin.
const FLAT_POINT_EPS: f64 = 1e-6;
const FLAT_POINT_PATIENCE: usize = 100;

/// Finite-difference training is only offered for small widths.
pub const MAX_FULL_TRAINING_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum XDistribution {
    /// Uniform on `[-1, 1]`.
    #[default]
    Uniform,
    /// Standard normal.
    Gaussian,
}

/// One-dimensional regression task `y = slope·x + ε`, `ε ~ N(0, noise_var)`.
pub fn generate_task(n: usize, slope: f64, noise_var: f64, seed: u64) -> Result<(Matrix, Matrix)> {
    generate_task_with(n, slope, noise_var, seed, XDistribution::Uniform)
}

pub fn generate_task_with(
    n: usize,
    slope: f64,
    noise_var: f64,
    seed: u64,
    dist: XDistribution,
) -> Result<(Matrix, Matrix)> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {n}")));
    }
    if !(noise_var >= 0.0) || !noise_var.is_finite() || !slope.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "slope must be finite and noise variance non-negative (got {slope}, {noise_var})"
        )));
    }
    let mut rng = Rng::new(seed);
    let xs: Vec<f64> = (0..n)
        .map(|_| match dist {
            XDistribution::Uniform => rng.uniform_in(-1.0, 1.0),
            XDistribution::Gaussian => rng.gaussian(),
        })
        .collect();
    let std = noise_var.sqrt();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let eps = if std > 0.0 { std * rng.gaussian() } else { 0.0 };
            slope * x + eps
        })
        .collect();
    Ok((Matrix::column(xs)?, Matrix::column(ys)?))
}

/// The single-parameter model with `XᵀX` and `XᵀY` cached.
#[derive(Debug, Clone)]
pub struct ScalarModel {
    pub l: f64,
    x: Vec<f64>,
    y: Vec<f64>,
    s: f64,
    c: f64,
}

impl ScalarModel {
    pub fn new(x: &Matrix, y: &Matrix, l: f64) -> Result<Self> {
        if x.cols() != 1 || y.cols() != 1 || x.rows() != y.rows() {
            return Err(Error::mismatch("ScalarModel", x.shape(), y.shape()));
        }
        let xs = x.as_slice().to_vec();
        let ys = y.as_slice().to_vec();
        let s: f64 = xs.iter().map(|v| v * v).sum();
        let c: f64 = xs.iter().zip(&ys).map(|(a, b)| a * b).sum();
        if !(s > 0.0) {
            return Err(Error::RankDeficient {
                min: s,
                max: s,
                tol: 0.0,
            });
        }
        Ok(Self { l, x: xs, y: ys, s, c })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn sum_sq(&self) -> f64 {
        self.s
    }

    pub fn cross(&self) -> f64 {
        self.c
    }

    /// `L* = ((1/n) XᵀX)^(-1/2)`.
    pub fn l_star(&self) -> f64 {
        (self.s / self.n() as f64).powf(-0.5)
    }

    /// Slope `a(L) = L⁴ s c / n²` of the model's prediction `Ŷ = a·X`.
    pub fn prediction_slope(&self, l: f64) -> f64 {
        let n = self.n() as f64;
        let l2 = l * l;
        l2 * l2 * self.s * self.c / (n * n)
    }

    pub fn predict(&self, l: f64) -> Vec<f64> {
        let a = self.prediction_slope(l);
        self.x.iter().map(|v| a * v).collect()
    }

    pub fn mse_at(&self, l: f64) -> f64 {
        let a = self.prediction_slope(l);
        let n = self.n() as f64;
        self.x
            .iter()
            .zip(&self.y)
            .map(|(xv, yv)| {
                let r = a * xv - yv;
                r * r
            })
            .sum::<f64>()
            / n
    }

    /// MSE and its analytic derivative with respect to `L`, evaluated at
    /// `L = self.l`.
    pub fn loss_and_grad(&self) -> (f64, f64) {
        let l = self.l;
        let n = self.n() as f64;
        let a = self.prediction_slope(l);
        let da = 4.0 * l * l * l * self.s * self.c / (n * n);
        let mut loss = 0.0;
        let mut grad = 0.0;
        for (xv, yv) in self.x.iter().zip(&self.y) {
            let r = a * xv - yv;
            loss += r * r;
            grad += r * da * xv;
        }
        (loss / n, 2.0 * grad / n)
    }
}

/// Free-function form of [`ScalarModel::loss_and_grad`].
pub fn loss_and_grad(model: &ScalarModel) -> (f64, f64) {
    model.loss_and_grad()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for a single scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: f64,
    pub v: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            step: 0,
            m: 0.0,
            v: 0.0,
            lr: config.lr,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
        }
    }

    /// One bias-corrected Adam update. Returns the advanced state and the new
    /// parameter value.
    pub fn step(self, grad: f64, param: f64) -> (Self, f64) {
        let step = self.step + 1;
        let m = self.beta1 * self.m + (1.0 - self.beta1) * grad;
        let v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad;
        let m_hat = m / (1.0 - self.beta1.powf(step as f64));
        let v_hat = v / (1.0 - self.beta2.powf(step as f64));
        let param = param - self.lr * m_hat / (v_hat.sqrt() + self.eps);
        (Self { step, m, v, ..self }, param)
    }
}

pub fn adam_step(state: AdamState, grad: f64, param: f64) -> (AdamState, f64) {
    state.step(grad, param)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n: usize,
    pub slope: f64,
    pub noise_var: f64,
    pub seed: u64,
    pub l0: f64,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub x_dist: XDistribution,
    /// Keep every `record_every`-th epoch (the last epoch is always kept).
    pub record_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n: 500,
            slope: 2.0,
            noise_var: 1e-4,
            seed: 42,
            l0: 0.5,
            epochs: 5000,
            adam: AdamConfig::default(),
            x_dist: XDistribution::Uniform,
            record_every: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mse: f64,
    pub rel_dist_to_ols: f64,
    pub l_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub records: Vec<EpochRecord>,
    pub l_star: f64,
    pub seed: u64,
    /// MSE of the closed-form least-squares fit on the same data.
    pub ols_mse: f64,
    pub warnings: Vec<String>,
}

impl TrainingTrace {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// `|L − L*| / L*` for a record.
    pub fn structural_error(&self, record: &EpochRecord) -> f64 {
        (record.l_value - self.l_star).abs() / self.l_star
    }

    /// First recorded epoch at which `|L − L*| / L*` drops below `threshold`.
    pub fn structural_crossing(&self, threshold: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| self.structural_error(r) < threshold)
            .map(|r| r.epoch)
    }

    /// First recorded epoch at which the relative distance to the OLS fit
    /// drops below `threshold`.
    pub fn functional_crossing(&self, threshold: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.rel_dist_to_ols < threshold)
            .map(|r| r.epoch)
    }
}

fn validate(config: &TrainConfig) -> Result<()> {
    if config.epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be at least 1".into()));
    }
    if config.record_every == 0 {
        return Err(Error::InvalidArgument("record_every must be at least 1".into()));
    }
    if !config.l0.is_finite() {
        return Err(Error::InvalidArgument("l0 must be finite".into()));
    }
    let a = &config.adam;
    if !(a.lr > 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps >= 0.0) {
        return Err(Error::InvalidArgument(format!("invalid Adam settings {a:?}")));
    }
    Ok(())
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// Full-batch Adam on the scalar model, starting from `config.l0`.
pub fn train(config: &TrainConfig) -> Result<TrainingTrace> {
    validate(config)?;
    let (x, y) = generate_task_with(config.n, config.slope, config.noise_var, config.seed, config.x_dist)?;
    train_on(config, &x, &y)
}

/// As [`train`], on caller-provided data.
pub fn train_on(config: &TrainConfig, x: &Matrix, y: &Matrix) -> Result<TrainingTrace> {
    validate(config)?;
    let mut model = ScalarModel::new(x, y, config.l0)?;
    let ols = ols_fit(x, y)?;
    let ols_fitted = ols.fitted.as_slice();
    let ols_norm = ols_fitted.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ols_mse = ols.residual_norm * ols.residual_norm / model.n() as f64;
    let l_star = model.l_star();

    let mut adam = AdamState::new(config.adam);
    let mut records = Vec::with_capacity(config.epochs / config.record_every + 1);
    let mut warnings = Vec::new();
    let mut flat_run = 0usize;

    for epoch in 1..=config.epochs {
        let (_, grad) = model.loss_and_grad();
        let (next, l) = adam.step(grad, model.l);
        adam = next;
        model.l = l;

        let mse = model.mse_at(l);
        if !mse.is_finite() || !l.is_finite() || l.abs() > DIVERGENCE_LIMIT {
            return Err(Error::Diverged { epoch, l, loss: mse });
        }

        if l.abs() < FLAT_POINT_EPS {
            flat_run += 1;
            if flat_run == FLAT_POINT_PATIENCE {
                warnings.push(format!(
                    "L has stayed within {FLAT_POINT_EPS:e} of zero for {FLAT_POINT_PATIENCE} epochs (epoch {epoch}); the loss is flat there"
                ));
            }
        } else {
            flat_run = 0;
        }

        if epoch % config.record_every == 0 || epoch == config.epochs {
            let dist = l2_distance(&model.predict(l), ols_fitted);
            let rel_dist_to_ols = if ols_norm > 0.0 { dist / ols_norm } else { dist };
            records.push(EpochRecord {
                epoch,
                mse,
                rel_dist_to_ols,
                l_value: l,
            });
        }
    }

    Ok(TrainingTrace {
        records,
        l_star,
        seed: config.seed,
        ols_mse,
        warnings,
    })
}

/// Record for unconstrained training of all five weight matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullEpochRecord {
    pub epoch: usize,
    pub mse: f64,
    pub rel_dist_to_ols: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullTrainingTrace {
    pub records: Vec<FullEpochRecord>,
    pub params: TransformerParams,
}

/// Adam over every entry of `{W_Q, W_K, W_V, W_FFN, W_P}` using central
/// finite-difference gradients of the MSE. Only for `k ≤ 4`.
pub fn train_full(
    x: &Matrix,
    y: &Matrix,
    init: TransformerParams,
    adam: AdamConfig,
    epochs: usize,
    fd_step: f64,
) -> Result<FullTrainingTrace> {
    let k = init.dim();
    if k > MAX_FULL_TRAINING_DIM {
        return Err(Error::InvalidArgument(format!(
            "finite-difference training supports k <= {MAX_FULL_TRAINING_DIM}, got {k}"
        )));
    }
    if x.cols() != k || y.rows() != x.rows() || y.cols() != 1 {
        return Err(Error::mismatch("train_full", x.shape(), y.shape()));
    }
    if epochs == 0 || !(fd_step > 0.0) {
        return Err(Error::InvalidArgument("epochs and fd_step must be positive".into()));
    }
    let ols = ols_fit(x, y)?;
    let mse_of = |flat: &[f64]| -> Result<(f64, Matrix)> {
        let params = TransformerParams::from_flat(k, flat)?;
        let out = forward(&params, x)?;
        let r = out.sub(y)?.frobenius_norm();
        Ok((r * r / x.rows() as f64, out))
    };

    let mut flat = init.to_flat();
    let mut states = vec![AdamState::new(adam); flat.len()];
    let mut records = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        let mut grads = vec![0.0; flat.len()];
        for i in 0..flat.len() {
            let orig = flat[i];
            flat[i] = orig + fd_step;
            let (up, _) = mse_of(&flat)?;
            flat[i] = orig - fd_step;
            let (down, _) = mse_of(&flat)?;
            flat[i] = orig;
            grads[i] = (up - down) / (2.0 * fd_step);
        }
        for ((p, s), g) in flat.iter_mut().zip(states.iter_mut()).zip(&grads) {
            let (next, value) = s.step(*g, *p);
            *s = next;
            *p = value;
        }
        let (mse, out) = mse_of(&flat)?;
        if !mse.is_finite() || flat.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            return Err(Error::Diverged {
                epoch,
                l: flat.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
                loss: mse,
            });
        }
        records.push(FullEpochRecord {
            epoch,
            mse,
            rel_dist_to_ols: out.relative_frobenius_diff(&ols.fitted)?,
        });
    }
    Ok(FullTrainingTrace {
        records,
        params: TransformerParams::from_flat(k, &flat)?,
    })
}
