//! C ABI for `ols-attention`.
//!
//! All objects cross the boundary as opaque handles created by `*_new`-style
//! functions and released with the matching `*_free`. Every fallible call
//! returns an [`OlsStatus`]; on failure a human-readable message is available
//! from [`ols_last_error_message`] on the same thread. Matrices are row-major
//! `double` arrays. Panics never unwind into C; they surface as
//! `OLS_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ols_attention::attention::{construct_ols_params, equivalence_report, forward, OlsConfiguration};
use ols_attention::matrix::Matrix;
use ols_attention::memory::{shift_experiment, ShiftKind, ShiftSpec};
use ols_attention::ols::ols_fit;
use ols_attention::trainer::{train, AdamConfig, EpochRecord, TrainConfig, TrainingTrace, XDistribution};
use ols_attention::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OlsStatus {
    Ok = 0,
    NullPointer = 1,
    DimensionMismatch = 2,
    RankDeficient = 3,
    NonFinite = 4,
    NotConverged = 5,
    NotPositiveDefinite = 6,
    Diverged = 7,
    AssociationMismatch = 8,
    InvalidArgument = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OlsShiftKind {
    Scale = 0,
    Rotate = 1,
    Anisotropic = 2,
}

/// Opaque dense matrix.
pub struct OlsMatrix(Matrix);

/// Opaque attention weights configured as least squares.
pub struct OlsConfig(OlsConfiguration);

/// Opaque training trace.
pub struct OlsTrace(TrainingTrace);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlsEquivalenceReport {
    pub n: usize,
    pub k: usize,
    pub max_abs_diff: f64,
    pub rel_frobenius_diff: f64,
    pub whitening_residual: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlsTrainConfig {
    pub n: usize,
    pub slope: f64,
    pub noise_var: f64,
    pub seed: u64,
    pub l0: f64,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Draw `x` from N(0, 1) instead of U[-1, 1].
    pub gaussian_x: bool,
    pub record_every: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlsEpochRecord {
    pub epoch: usize,
    pub mse: f64,
    pub rel_dist_to_ols: f64,
    pub l_value: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure {
    status: OlsStatus,
    message: String,
}

fn failure(status: OlsStatus, message: impl Into<String>) -> Failure {
    Failure {
        status,
        message: message.into(),
    }
}

fn status_of(err: &Error) -> OlsStatus {
    match err {
        Error::DimensionMismatch { .. } => OlsStatus::DimensionMismatch,
        Error::NonFinite(_) => OlsStatus::NonFinite,
        Error::RankDeficient { .. } => OlsStatus::RankDeficient,
        Error::NotPositiveDefinite { .. } => OlsStatus::NotPositiveDefinite,
        Error::NotConverged { .. } => OlsStatus::NotConverged,
        Error::Diverged { .. } => OlsStatus::Diverged,
        Error::AssociationMismatch { .. } => OlsStatus::AssociationMismatch,
        Error::InvalidArgument(_) => OlsStatus::InvalidArgument,
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        failure(status_of(&err), err.to_string())
    }
}

fn null(what: &str) -> Failure {
    failure(OlsStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any failure message, and converts panics to
/// [`OlsStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OlsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OlsStatus::Ok,
        Ok(Err(f)) => {
            set_last_error(f.message);
            f.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            OlsStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message for the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ols_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Copies `rows * cols` values from `data` into a new matrix.
///
/// # Safety
/// `data` must point to `rows * cols` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ols_matrix_new(rows: usize, cols: usize, data: *const f64, out: *mut *mut OlsMatrix) -> OlsStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| failure(OlsStatus::InvalidArgument, "rows * cols overflows"))?;
        let values = std::slice::from_raw_parts(data, len).to_vec();
        let m = Matrix::new(rows, cols, values)?;
        write_out(out, OlsMatrix(m), "out")
    })
}

/// # Safety
/// `m` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ols_matrix_free(m: *mut OlsMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Row count, or 0 for NULL.
///
/// # Safety
/// `m` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ols_matrix_rows(m: *const OlsMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.rows())
}

/// Column count, or 0 for NULL.
///
/// # Safety
/// `m` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ols_matrix_cols(m: *const OlsMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.cols())
}

/// Copies the row-major entries into `buf`, which holds `len` doubles.
///
/// # Safety
/// `m` must be a live handle; `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ols_matrix_copy_data(m: *const OlsMatrix, buf: *mut f64, len: usize) -> OlsStatus {
    guard(|| {
        let m = deref(m, "matrix")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let data = m.0.as_slice();
        if len < data.len() {
            return Err(failure(
                OlsStatus::BufferTooSmall,
                format!("buffer holds {len} values, matrix has {}", data.len()),
            ));
        }
        ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len());
        Ok(())
    })
}

/// Least-squares fit of `y` (n×1) on `x` (n×k). Either output may be NULL.
///
/// # Safety
/// `x`, `y` must be live handles; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ols_fit_matrices(
    x: *const OlsMatrix,
    y: *const OlsMatrix,
    out_beta: *mut *mut OlsMatrix,
    out_fitted: *mut *mut OlsMatrix,
) -> OlsStatus {
    guard(|| {
        let fit = ols_fit(&deref(x, "x")?.0, &deref(y, "y")?.0)?;
        if !out_beta.is_null() {
            write_out(out_beta, OlsMatrix(fit.beta), "out_beta")?;
        }
        if !out_fitted.is_null() {
            write_out(out_fitted, OlsMatrix(fit.fitted), "out_fitted")?;
        }
        Ok(())
    })
}

/// Builds the attention weights that reproduce least squares on `(x, y)`.
///
/// # Safety
/// `x`, `y` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ols_config_new(x: *const OlsMatrix, y: *const OlsMatrix, out: *mut *mut OlsConfig) -> OlsStatus {
    guard(|| {
        let cfg = construct_ols_params(&deref(x, "x")?.0, &deref(y, "y")?.0)?;
        write_out(out, OlsConfig(cfg), "out")
    })
}

/// # Safety
/// `c` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ols_config_free(c: *mut OlsConfig) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// The shared query/key/value weight `L` (k×k).
///
/// # Safety
/// `c` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ols_config_whitening(c: *const OlsConfig, out: *mut *mut OlsMatrix) -> OlsStatus {
    guard(|| {
        let c = deref(c, "config")?;
        write_out(out, OlsMatrix(c.0.whitening.clone()), "out")
    })
}

/// Regression coefficients `β = L·P` (k×1).
///
/// # Safety
/// `c` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ols_config_coefficients(c: *const OlsConfig, out: *mut *mut OlsMatrix) -> OlsStatus {
    guard(|| {
        let c = deref(c, "config")?;
        write_out(out, OlsMatrix(c.0.coefficients()), "out")
    })
}

/// Attention forward pass of the configured weights on `x` (n×k).
///
/// # Safety
/// `c`, `x` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ols_config_forward(c: *const OlsConfig, x: *const OlsMatrix, out: *mut *mut OlsMatrix) -> OlsStatus {
    guard(|| {
        let c = deref(c, "config")?;
        let y = forward(&c.0.params, &deref(x, "x")?.0)?;
        write_out(out, OlsMatrix(y), "out")
    })
}

/// Compares the configured attention output with least squares on `(x, y)`.
///
/// # Safety
/// `x`, `y` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ols_equivalence_report(
    x: *const OlsMatrix,
    y: *const OlsMatrix,
    out: *mut OlsEquivalenceReport,
) -> OlsStatus {
    guard(|| {
        let r = equivalence_report(&deref(x, "x")?.0, &deref(y, "y")?.0)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = OlsEquivalenceReport {
            n: r.n,
            k: r.k,
            max_abs_diff: r.max_abs_diff,
            rel_frobenius_diff: r.rel_frobenius_diff,
            whitening_residual: r.whitening_residual,
        };
        Ok(())
    })
}

/// Reference training setup: n = 500, slope 2, noise variance 1e-4, seed 42,
/// L₀ = 0.5, 5000 epochs, Adam(0.01, 0.9, 0.999, 1e-8), uniform x.
#[no_mangle]
pub extern "C" fn ols_train_config_default() -> OlsTrainConfig {
    let d = TrainConfig::default();
    OlsTrainConfig {
        n: d.n,
        slope: d.slope,
        noise_var: d.noise_var,
        seed: d.seed,
        l0: d.l0,
        epochs: d.epochs,
        lr: d.adam.lr,
        beta1: d.adam.beta1,
        beta2: d.adam.beta2,
        eps: d.adam.eps,
        gaussian_x: d.x_dist == XDistribution::Gaussian,
        record_every: d.record_every,
    }
}

/// Trains the scalar model.
///
/// # Safety
/// `config` must point to a valid struct; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ols_train(config: *const OlsTrainConfig, out: *mut *mut OlsTrace) -> OlsStatus {
    guard(|| {
        let c = *deref(config, "config")?;
        let cfg = TrainConfig {
            n: c.n,
            slope: c.slope,
            noise_var: c.noise_var,
            seed: c.seed,
            l0: c.l0,
            epochs: c.epochs,
            adam: AdamConfig {
                lr: c.lr,
                beta1: c.beta1,
                beta2: c.beta2,
                eps: c.eps,
            },
            x_dist: if c.gaussian_x { XDistribution::Gaussian } else { XDistribution::Uniform },
            record_every: c.record_every,
        };
        write_out(out, OlsTrace(train(&cfg)?), "out")
    })
}

/// # Safety
/// `t` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ols_trace_free(t: *mut OlsTrace) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Number of recorded epochs, or 0 for NULL.
///
/// # Safety
/// `t` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ols_trace_len(t: *const OlsTrace) -> usize {
    t.as_ref().map_or(0, |t| t.0.records.len())
}

/// `L* = ((1/n) Σ x²)^(-1/2)`, or NaN for NULL.
///
/// # Safety
/// `t` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ols_trace_l_star(t: *const OlsTrace) -> f64 {
    t.as_ref().map_or(f64::NAN, |t| t.0.l_star)
}

/// # Safety
/// `t` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ols_trace_record(t: *const OlsTrace, index: usize, out: *mut OlsEpochRecord) -> OlsStatus {
    guard(|| {
        let t = deref(t, "trace")?;
        let r: &EpochRecord = t.0.records.get(index).ok_or_else(|| {
            failure(
                OlsStatus::InvalidArgument,
                format!("record {index} out of range (len {})", t.0.records.len()),
            )
        })?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = OlsEpochRecord {
            epoch: r.epoch,
            mse: r.mse,
            rel_dist_to_ols: r.rel_dist_to_ols,
            l_value: r.l_value,
        };
        Ok(())
    })
}

/// Trains on `(x, y)`, shifts a covariance-matched context, and writes the
/// relative error of the in-context prediction against `Zβ`.
///
/// # Safety
/// `x`, `y` must be live handles; `out_error` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ols_shift_relative_error(
    x: *const OlsMatrix,
    y: *const OlsMatrix,
    kind: OlsShiftKind,
    param: f64,
    seed: u64,
    out_error: *mut f64,
) -> OlsStatus {
    guard(|| {
        let x = &deref(x, "x")?.0;
        let kind = match kind {
            OlsShiftKind::Scale => ShiftKind::Scale,
            OlsShiftKind::Rotate => ShiftKind::Rotate,
            OlsShiftKind::Anisotropic => ShiftKind::Anisotropic,
        };
        let spec = ShiftSpec::from_kind(kind, param, x.cols());
        let report = shift_experiment(x, &deref(y, "y")?.0, &spec, seed)?;
        let out = out_error.as_mut().ok_or_else(|| null("out_error"))?;
        *out = report.relative_error;
        Ok(())
    })
}
