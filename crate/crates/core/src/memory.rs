//! Context prediction under a covariance shift.
//!
//! The trained whitening factor carries `LLᵀ = Σ_x⁻¹` (slow memory: fixed by
//! the training data). At inference the layer forms `(1/m) ZᵀY_z` from the
//! context (fast memory). For noise-free `Y_z = Zβ` the prediction is
//! `Z Σ_x⁻¹ Σ_z β`, so any mismatch between `Σ_z` and `Σ_x` shows up as the
//! linear distortion `Σ_x⁻¹ Σ_z`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::construct_ols_params;
use crate::error::{Error, Result};
use crate::matrix::{empirical_covariance, Matrix};
use crate::ols::ols_fit;
use crate::rng::Rng;
use crate::spectral::{whitening_factor, Cholesky, DEFAULT_RANK_TOL};

/// An in-context dataset `{Z, Y_z}` generated from coefficients `β`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextTask {
    pub z: Matrix,
    pub y_z: Matrix,
    pub beta_true: Matrix,
}

impl ContextTask {
    /// `Y_z = Zβ` exactly.
    pub fn noise_free(z: Matrix, beta_true: Matrix) -> Result<Self> {
        let y_z = z.matmul(&beta_true)?;
        Ok(Self { z, y_z, beta_true })
    }

    pub fn m(&self) -> usize {
        self.z.rows()
    }
}

/// Slow memory `LLᵀ` applied to fast memory `(1/m) ZᵀY_z`, then mapped back
/// through `Z`.
pub fn context_predict(whitening: &Matrix, task: &ContextTask) -> Result<Matrix> {
    let k = task.z.cols();
    if whitening.shape() != (k, k) {
        return Err(Error::mismatch("context_predict", whitening.shape(), task.z.shape()));
    }
    let m = task.m() as f64;
    let slow = whitening.matmul_t(whitening)?;
    let fast = task.z.t_matmul(&task.y_z)?.scale(1.0 / m);
    task.z.matmul(&slow.matmul(&fast)?)
}

/// `Σ_x⁻¹ Σ_z` via a Cholesky solve against `Σ_x`.
pub fn distortion_matrix(x: &Matrix, z: &Matrix) -> Result<Matrix> {
    if x.cols() != z.cols() {
        return Err(Error::mismatch("distortion_matrix", x.shape(), z.shape()));
    }
    let sigma_x = empirical_covariance(x);
    let sigma_z = empirical_covariance(z);
    Cholesky::with_rank_tol(&sigma_z, DEFAULT_RANK_TOL)?;
    Cholesky::with_rank_tol(&sigma_x, DEFAULT_RANK_TOL)?.solve(&sigma_z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ShiftKind {
    Scale,
    Rotate,
    Anisotropic,
}

impl ShiftKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ShiftKind::Scale => "scale",
            ShiftKind::Rotate => "rotate",
            ShiftKind::Anisotropic => "anisotropic",
        }
    }
}

/// How the context design is derived from samples matching the training
/// covariance. Each spec is a right-multiplication `Z = Z₀ T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftSpec {
    /// Every entry of `Z₀` scaled by `c`, so `Σ_z = c² Σ_x`.
    Scale(f64),
    /// Givens rotation by the given angle (radians) in the plane of the
    /// first two features.
    Rotate(f64),
    /// An arbitrary `k × k` orthogonal matrix.
    Orthogonal(Matrix),
    /// Per-feature scale factors.
    Anisotropic(Vec<f64>),
}

impl ShiftSpec {
    /// The single-parameter family used by sweeps. `Anisotropic` stretches the
    /// first feature by `param` and leaves the rest alone.
    pub fn from_kind(kind: ShiftKind, param: f64, k: usize) -> Self {
        match kind {
            ShiftKind::Scale => ShiftSpec::Scale(param),
            ShiftKind::Rotate => ShiftSpec::Rotate(param),
            ShiftKind::Anisotropic => {
                let mut factors = vec![1.0; k];
                factors[0] = param;
                ShiftSpec::Anisotropic(factors)
            }
        }
    }

    pub fn transform(&self, k: usize) -> Result<Matrix> {
        match self {
            ShiftSpec::Scale(c) => {
                if !c.is_finite() || *c == 0.0 {
                    return Err(Error::InvalidArgument(format!("scale factor must be finite and non-zero, got {c}")));
                }
                Ok(Matrix::identity(k).scale(*c))
            }
            ShiftSpec::Rotate(angle) => {
                if k < 2 {
                    return Err(Error::InvalidArgument("rotation needs at least two features".into()));
                }
                if !angle.is_finite() {
                    return Err(Error::InvalidArgument(format!("rotation angle must be finite, got {angle}")));
                }
                let mut t = Matrix::identity(k);
                let (s, c) = angle.sin_cos();
                t[(0, 0)] = c;
                t[(0, 1)] = -s;
                t[(1, 0)] = s;
                t[(1, 1)] = c;
                Ok(t)
            }
            ShiftSpec::Orthogonal(q) => {
                if q.shape() != (k, k) {
                    return Err(Error::mismatch("orthogonal shift", q.shape(), (k, k)));
                }
                let defect = q.t_matmul(q)?.max_abs_diff(&Matrix::identity(k))?;
                if defect > 1e-10 {
                    return Err(Error::InvalidArgument(format!("shift matrix is not orthogonal (defect {defect:e})")));
                }
                Ok(q.clone())
            }
            ShiftSpec::Anisotropic(factors) => {
                if factors.len() != k {
                    return Err(Error::InvalidArgument(format!(
                        "expected {k} anisotropic factors, got {}",
                        factors.len()
                    )));
                }
                if factors.iter().any(|f| !f.is_finite() || *f == 0.0) {
                    return Err(Error::InvalidArgument("anisotropic factors must be finite and non-zero".into()));
                }
                Ok(Matrix::from_diagonal(factors))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub sigma_x: Matrix,
    pub sigma_z: Matrix,
    /// `Σ_x⁻¹ Σ_z`.
    pub distortion: Matrix,
    /// `Ŷ_z` from [`context_predict`].
    pub predicted: Matrix,
    /// `Zβ`.
    pub ideal: Matrix,
    /// `‖Ŷ_z − Zβ‖ / ‖Zβ‖`.
    pub relative_error: f64,
}

impl ShiftReport {
    /// `‖Σ_x⁻¹Σ_z − I‖_F`.
    pub fn distortion_distance_from_identity(&self) -> f64 {
        let k = self.distortion.rows();
        self.distortion
            .sub(&Matrix::identity(k))
            .expect("distortion is square")
            .frobenius_norm()
    }
}

/// Options for [`shift_experiment_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftOptions {
    /// Context sample count; `None` reuses the training sample count.
    pub m: Option<usize>,
    /// Standard deviation of Gaussian noise added to `Y_z`. Non-zero values
    /// leave the noise-free setting the distortion law describes.
    pub context_noise_std: f64,
}

impl Default for ShiftOptions {
    fn default() -> Self {
        Self {
            m: None,
            context_noise_std: 0.0,
        }
    }
}

pub fn shift_experiment(x: &Matrix, y: &Matrix, spec: &ShiftSpec, seed: u64) -> Result<ShiftReport> {
    shift_experiment_with(x, y, spec, seed, ShiftOptions::default())
}

/// Fresh Gaussian samples recolored so their empirical covariance equals
/// `Σ_x` exactly. This is the unshifted context.
pub fn matched_context(x: &Matrix, m: usize, seed: u64) -> Result<Matrix> {
    let k = x.cols();
    if m < k {
        return Err(Error::InvalidArgument(format!(
            "context needs at least k = {k} samples, got {m}"
        )));
    }
    let train = whitening_factor(&empirical_covariance(x), DEFAULT_RANK_TOL)?;
    let raw = Rng::new(seed).gaussian_matrix(m, k);
    let raw_white = whitening_factor(&empirical_covariance(&raw), DEFAULT_RANK_TOL)?;
    raw.matmul(&raw_white.whitening)?.matmul(&train.coloring())
}

/// Trains on `(X, Y)`, builds a context `Z = Z₀T` from fresh samples whose
/// covariance matches `Σ_x`, sets `Y_z = Zβ` with `β` the least-squares
/// coefficients of the training data, and compares the layer's in-context
/// prediction against `Zβ`.
pub fn shift_experiment_with(
    x: &Matrix,
    y: &Matrix,
    spec: &ShiftSpec,
    seed: u64,
    options: ShiftOptions,
) -> Result<ShiftReport> {
    let k = x.cols();
    let m = options.m.unwrap_or(x.rows());
    let transform = spec.transform(k)?;
    let config = construct_ols_params(x, y)?;
    let beta = ols_fit(x, y)?.beta;

    let z = matched_context(x, m, seed)?.matmul(&transform)?;
    let mut task = ContextTask::noise_free(z, beta)?;
    let ideal = task.y_z.clone();
    if options.context_noise_std > 0.0 {
        let mut rng = Rng::derive(seed, 1);
        let noise = rng.gaussian_matrix(m, 1).scale(options.context_noise_std);
        task.y_z = task.y_z.add(&noise)?;
    }

    let predicted = context_predict(&config.whitening, &task)?;
    let relative_error = predicted.relative_frobenius_diff(&ideal)?;
    Ok(ShiftReport {
        sigma_x: empirical_covariance(x),
        sigma_z: empirical_covariance(&task.z),
        distortion: distortion_matrix(x, &task.z)?,
        predicted,
        ideal,
        relative_error,
    })
}

/// One point of a parameter sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub shift_kind: ShiftKind,
    pub shift_param: f64,
    pub relative_error: f64,
    pub distortion_frobenius_dist_from_identity: f64,
}

/// A sweep point: the CSV row plus the full report behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    #[serde(flatten)]
    pub row: SweepRow,
    pub report: ShiftReport,
}

/// Runs [`shift_experiment_with`] for every grid value in parallel. Every
/// point shares the same base context, and points come back in grid order.
pub fn shift_sweep(
    x: &Matrix,
    y: &Matrix,
    kind: ShiftKind,
    grid: &[f64],
    seed: u64,
    options: ShiftOptions,
) -> Result<Vec<SweepPoint>> {
    let k = x.cols();
    grid.par_iter()
        .map(|&param| {
            let spec = ShiftSpec::from_kind(kind, param, k);
            let report = shift_experiment_with(x, y, &spec, seed, options)?;
            let row = SweepRow {
                shift_kind: kind,
                shift_param: param,
                relative_error: report.relative_error,
                distortion_frobenius_dist_from_identity: report.distortion_distance_from_identity(),
            };
            Ok(SweepPoint { row, report })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;

    fn training_data(seed: u64, n: usize, k: usize) -> (Matrix, Matrix, Matrix) {
        let mut rng = Rng::new(seed);
        let mix = rng.gaussian_matrix(k, k).add(&Matrix::identity(k).scale(2.0)).unwrap();
        let x = rng.gaussian_matrix(n, k).matmul(&mix).unwrap();
        let beta = rng.gaussian_matrix(k, 1);
        let y = x.matmul(&beta).unwrap();
        (x, y, beta)
    }

    #[test]
    fn same_context_recovers_truth() {
        let (x, y, beta) = training_data(1, 60, 3);
        let cfg = construct_ols_params(&x, &y).unwrap();
        let task = ContextTask::noise_free(x.clone(), beta).unwrap();
        let out = context_predict(&cfg.whitening, &task).unwrap();
        assert!(out.relative_frobenius_diff(&y).unwrap() <= 1e-10);
        let fit = ols_fit(&x, &y).unwrap();
        assert!(out.relative_frobenius_diff(&fit.fitted).unwrap() <= 1e-10);
    }

    #[test]
    fn scaled_covariance_scales_prediction() {
        let (x, y, beta) = training_data(2, 60, 3);
        let cfg = construct_ols_params(&x, &y).unwrap();
        let c: f64 = 2.5;
        let z = x.scale(c.sqrt());
        let task = ContextTask::noise_free(z.clone(), beta.clone()).unwrap();
        let out = context_predict(&cfg.whitening, &task).unwrap();
        let want = z.matmul(&beta).unwrap().scale(c);
        assert!(out.relative_frobenius_diff(&want).unwrap() <= 1e-10);
    }

    #[test]
    fn prediction_follows_distortion_oracle() {
        let (x, y, beta) = training_data(3, 80, 4);
        let cfg = construct_ols_params(&x, &y).unwrap();
        let mut rng = Rng::new(33);
        let z = rng.gaussian_matrix(50, 4).matmul(&Matrix::from_diagonal(&[3.0, 0.5, 1.0, 2.0])).unwrap();
        let task = ContextTask::noise_free(z.clone(), beta.clone()).unwrap();
        let out = context_predict(&cfg.whitening, &task).unwrap();

        let sx = oracle::covariance_by_summation(x.as_slice(), 80, 4);
        let sz = oracle::covariance_by_summation(z.as_slice(), 50, 4);
        let sx_inv = oracle::gauss_jordan_inverse(&sx, 4).unwrap();
        let d = oracle::naive_matmul(&sx_inv, 4, 4, &sz, 4);
        let db = oracle::naive_matmul(&d, 4, 4, beta.as_slice(), 1);
        let want = oracle::naive_matmul(z.as_slice(), 50, 4, &db, 1);
        assert!(oracle::relative_frobenius(out.as_slice(), &want) <= 1e-8);

        let dm = distortion_matrix(&x, &z).unwrap();
        assert!(oracle::max_abs_diff(dm.as_slice(), &d) <= 1e-9 * dm.max_abs().max(1.0));
    }

    #[test]
    fn slow_fast_grouping_matches_single_expression() {
        let (x, y, beta) = training_data(4, 40, 3);
        let cfg = construct_ols_params(&x, &y).unwrap();
        let z = Rng::new(44).gaussian_matrix(25, 3);
        let task = ContextTask::noise_free(z.clone(), beta).unwrap();
        let grouped = context_predict(&cfg.whitening, &task).unwrap();
        let l = &cfg.whitening;
        let single = z
            .matmul(l)
            .unwrap()
            .matmul_t(&z.matmul(l).unwrap())
            .unwrap()
            .matmul(&task.y_z)
            .unwrap()
            .scale(1.0 / 25.0);
        assert!(grouped.max_abs_diff(&single).unwrap() <= 1e-10 * single.max_abs().max(1.0));
    }

    #[test]
    fn distortion_of_same_and_scaled_design() {
        let (x, _, _) = training_data(5, 50, 3);
        let d = distortion_matrix(&x, &x).unwrap();
        assert!(d.max_abs_diff(&Matrix::identity(3)).unwrap() <= 1e-10);
        let d = distortion_matrix(&x, &x.scale(2f64.sqrt())).unwrap();
        assert!(d.max_abs_diff(&Matrix::identity(3).scale(2.0)).unwrap() <= 1e-10);
    }

    #[test]
    fn distortion_rejects_degenerate_context() {
        let (x, _, _) = training_data(6, 50, 2);
        let z = Matrix::from_fn(10, 2, |i, _| i as f64);
        assert!(matches!(distortion_matrix(&x, &z), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn matched_context_has_training_covariance() {
        let (x, _, _) = training_data(7, 70, 3);
        let z0 = matched_context(&x, 40, 9).unwrap();
        let diff = empirical_covariance(&z0).max_abs_diff(&empirical_covariance(&x)).unwrap();
        assert!(diff <= 1e-10 * empirical_covariance(&x).max_abs());
        assert!(matched_context(&x, 2, 9).is_err());
    }

    #[test]
    fn scale_experiment_error_is_c_minus_one() {
        let (x, y, _) = training_data(8, 100, 3);
        let r = shift_experiment(&x, &y, &ShiftSpec::Scale(1.0), 1).unwrap();
        assert!(r.relative_error <= 1e-8);
        for &c in &[0.3_f64, 0.8, 1.7, 4.0] {
            let r = shift_experiment(&x, &y, &ShiftSpec::Scale(c.sqrt()), 1).unwrap();
            assert!((r.relative_error - (c - 1.0).abs()).abs() <= 1e-6, "{c}: {}", r.relative_error);
            assert!(r.distortion.max_abs_diff(&Matrix::identity(3).scale(c)).unwrap() <= 1e-8);
        }
    }

    #[test]
    fn anisotropic_experiment_matches_oracle() {
        let (x, y, beta) = training_data(9, 100, 2);
        let factors = vec![1.8, 0.6];
        let r = shift_experiment(&x, &y, &ShiftSpec::Anisotropic(factors.clone()), 2).unwrap();
        let z = matched_context(&x, 100, 2)
            .unwrap()
            .matmul(&Matrix::from_diagonal(&factors))
            .unwrap();

        let sx = oracle::covariance_by_summation(x.as_slice(), 100, 2);
        let sz = oracle::covariance_by_summation(z.as_slice(), 100, 2);
        let sx_inv = oracle::gauss_jordan_inverse(&sx, 2).unwrap();
        let d = oracle::naive_matmul(&sx_inv, 2, 2, &sz, 2);
        let db = oracle::naive_matmul(&d, 2, 2, beta.as_slice(), 1);
        let want = oracle::naive_matmul(z.as_slice(), 100, 2, &db, 1);
        let ideal = oracle::naive_matmul(z.as_slice(), 100, 2, beta.as_slice(), 1);

        assert!(oracle::relative_frobenius(r.predicted.as_slice(), &want) <= 1e-8);
        let expected_error = oracle::relative_frobenius(&want, &ideal);
        assert!((r.relative_error - expected_error).abs() <= 1e-8);
        assert!(r.relative_error > 1e-2);
    }

    #[test]
    fn rotation_requires_two_features() {
        assert!(ShiftSpec::Rotate(0.3).transform(1).is_err());
        let t = ShiftSpec::Rotate(0.3).transform(3).unwrap();
        assert!(t.t_matmul(&t).unwrap().max_abs_diff(&Matrix::identity(3)).unwrap() < 1e-15);
        assert!(ShiftSpec::Orthogonal(Matrix::from_diagonal(&[1.0, 2.0])).transform(2).is_err());
        assert!(ShiftSpec::Anisotropic(vec![1.0]).transform(2).is_err());
        assert!(ShiftSpec::Scale(0.0).transform(2).is_err());
    }

    #[test]
    fn sweep_rows_in_grid_order() {
        let (x, y, _) = training_data(10, 60, 2);
        let grid = [0.5, 1.0, 1.5, 2.0];
        let rows = shift_sweep(&x, &y, ShiftKind::Scale, &grid, 3, ShiftOptions::default()).unwrap();
        let params: Vec<f64> = rows.iter().map(|p| p.row.shift_param).collect();
        assert_eq!(params, grid);
        assert!(rows[1].row.relative_error <= 1e-8);
        assert!((rows[3].row.relative_error - 3.0).abs() <= 1e-6);
    }

    #[test]
    fn context_noise_is_opt_in() {
        let (x, y, _) = training_data(11, 60, 2);
        let opts = ShiftOptions {
            m: Some(30),
            context_noise_std: 0.1,
        };
        let r = shift_experiment_with(&x, &y, &ShiftSpec::Scale(1.0), 5, opts).unwrap();
        assert_eq!(r.ideal.rows(), 30);
        assert!(r.relative_error > 1e-6);
    }
}
