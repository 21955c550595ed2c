//! Single-layer linear attention and its least-squares configuration.
//!
//! The layer computes
//!
//! ```text
//! Output(X) = (1/n) (X W_Q)(X W_K)ᵀ(X W_V) · W_FFN · W_P
//! ```
//!
//! with no softmax, activation or normalization. Setting
//! `W_Q = W_K = W_V = L`, `W_FFN = I` and `W_P = (1/n) LᵀXᵀY`, where `L` is
//! the spectral whitening factor of `(1/n) XᵀX`, turns the forward pass into
//! the least-squares projection `X(XᵀX)⁻¹XᵀY`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{empirical_covariance, Matrix};
use crate::ols::ols_fit;
use crate::spectral::{whitening_factor, DEFAULT_RANK_TOL};

/// Agreement required between the factored and score-matrix forward passes
/// when the debug cross-check is on (relative to the output's max-abs).
pub const SCORE_CHECK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_ffn: Matrix,
    /// `k × 1` output head.
    pub w_p: Matrix,
}

impl TransformerParams {
    pub fn new(w_q: Matrix, w_k: Matrix, w_v: Matrix, w_ffn: Matrix, w_p: Matrix) -> Result<Self> {
        let k = w_q.rows();
        for (name, w) in [("w_q", &w_q), ("w_k", &w_k), ("w_v", &w_v), ("w_ffn", &w_ffn)] {
            if w.shape() != (k, k) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be {k}x{k}, got {}x{}",
                    w.rows(),
                    w.cols()
                )));
            }
        }
        if w_p.shape() != (k, 1) {
            return Err(Error::InvalidArgument(format!(
                "w_p must be {k}x1, got {}x{}",
                w_p.rows(),
                w_p.cols()
            )));
        }
        Ok(Self {
            w_q,
            w_k,
            w_v,
            w_ffn,
            w_p,
        })
    }

    /// Feature dimension `k`.
    pub fn dim(&self) -> usize {
        self.w_q.rows()
    }

    /// Flattens all weights as `[w_q, w_k, w_v, w_ffn, w_p]`, row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        [&self.w_q, &self.w_k, &self.w_v, &self.w_ffn, &self.w_p]
            .iter()
            .flat_map(|m| m.as_slice().iter().copied())
            .collect()
    }

    /// Inverse of [`TransformerParams::to_flat`].
    pub fn from_flat(k: usize, flat: &[f64]) -> Result<Self> {
        let kk = k * k;
        if flat.len() != 4 * kk + k {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters for k = {k}, got {}",
                4 * kk + k,
                flat.len()
            )));
        }
        let block = |i: usize| Matrix::new(k, k, flat[i * kk..(i + 1) * kk].to_vec());
        Self::new(
            block(0)?,
            block(1)?,
            block(2)?,
            block(3)?,
            Matrix::new(k, 1, flat[4 * kk..].to_vec())?,
        )
    }
}

/// Forward pass. `(XW_K)ᵀ(XW_V)` is formed first as a `k × k` matrix, so the
/// `n × n` score matrix is never built.
pub fn forward(params: &TransformerParams, x: &Matrix) -> Result<Matrix> {
    let n = x.rows() as f64;
    let q = x.matmul(&params.w_q)?;
    let kk = x.matmul(&params.w_k)?;
    let v = x.matmul(&params.w_v)?;
    let kv = kk.t_matmul(&v)?.scale(1.0 / n);
    q.matmul(&kv)?.matmul(&params.w_ffn)?.matmul(&params.w_p)
}

/// The raw `n × n` attention scores `(1/n)(XW_Q)(XW_K)ᵀ`.
pub fn attention_scores(params: &TransformerParams, x: &Matrix) -> Result<Matrix> {
    let n = x.rows() as f64;
    let q = x.matmul(&params.w_q)?;
    let kk = x.matmul(&params.w_k)?;
    Ok(q.matmul_t(&kk)?.scale(1.0 / n))
}

/// Forward pass through the materialized score matrix, checked against
/// [`forward`]. Returns the scores alongside the output.
pub fn forward_with_scores(params: &TransformerParams, x: &Matrix) -> Result<(Matrix, Matrix)> {
    let scores = attention_scores(params, x)?;
    let v = x.matmul(&params.w_v)?;
    let via_scores = scores.matmul(&v)?.matmul(&params.w_ffn)?.matmul(&params.w_p)?;
    let factored = forward(params, x)?;
    let discrepancy = via_scores.max_abs_diff(&factored)?;
    if discrepancy > SCORE_CHECK_TOL * factored.max_abs().max(1.0) {
        return Err(Error::AssociationMismatch { discrepancy });
    }
    Ok((scores, factored))
}

/// Weights that make the layer reproduce least squares on `(X, Y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsConfiguration {
    pub params: TransformerParams,
    /// Coordinates `P` of `β` in the basis given by the columns of `L`.
    pub coordinate_vector: Matrix,
    /// The shared query/key/value weight `L`.
    pub whitening: Matrix,
}

impl OlsConfiguration {
    /// Builds the configuration around an arbitrary square `L`, with
    /// `P = (1/n) LᵀXᵀY`.
    pub fn from_whitening(x: &Matrix, y: &Matrix, whitening: Matrix) -> Result<Self> {
        let k = x.cols();
        if whitening.shape() != (k, k) {
            return Err(Error::mismatch("from_whitening", x.shape(), whitening.shape()));
        }
        if y.rows() != x.rows() || y.cols() != 1 {
            return Err(Error::mismatch("from_whitening", x.shape(), y.shape()));
        }
        let n = x.rows() as f64;
        let xty = x.t_matmul(y)?;
        let coordinate_vector = whitening.t_matmul(&xty)?.scale(1.0 / n);
        let params = TransformerParams {
            w_q: whitening.clone(),
            w_k: whitening.clone(),
            w_v: whitening.clone(),
            w_ffn: Matrix::identity(k),
            w_p: coordinate_vector.clone(),
        };
        Ok(Self {
            params,
            coordinate_vector,
            whitening,
        })
    }

    /// `β = L·P`.
    pub fn coefficients(&self) -> Matrix {
        self.whitening
            .matmul(&self.coordinate_vector)
            .expect("L is k×k and P is k×1")
    }
}

/// `W_Q = W_K = W_V = L`, `W_FFN = I`, `W_P = P = (1/n) LᵀXᵀY`.
pub fn construct_ols_params(x: &Matrix, y: &Matrix) -> Result<OlsConfiguration> {
    let factor = whitening_factor(&empirical_covariance(x), DEFAULT_RANK_TOL)?;
    OlsConfiguration::from_whitening(x, y, factor.whitening)
}

/// Raw residuals between the attention route and the Cholesky OLS route.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub n: usize,
    pub k: usize,
    /// `‖forward − Ŷ_OLS‖_max`.
    pub max_abs_diff: f64,
    /// `‖forward − Ŷ_OLS‖_F / ‖Ŷ_OLS‖_F`.
    pub rel_frobenius_diff: f64,
    /// `‖(1/n) LᵀXᵀXL − I‖_max`.
    pub whitening_residual: f64,
}

pub fn equivalence_report(x: &Matrix, y: &Matrix) -> Result<EquivalenceReport> {
    equivalence_report_with(x, y, false)
}

/// As [`equivalence_report`]; with `debug_scores` the forward pass also goes
/// through the `n × n` score matrix and both association orders are compared.
pub fn equivalence_report_with(x: &Matrix, y: &Matrix, debug_scores: bool) -> Result<EquivalenceReport> {
    let config = construct_ols_params(x, y)?;
    let output = if debug_scores {
        forward_with_scores(&config.params, x)?.1
    } else {
        forward(&config.params, x)?
    };
    let fit = ols_fit(x, y)?;
    let xl = x.matmul(&config.whitening)?;
    let k = x.cols();
    let whitening_residual = empirical_covariance(&xl).max_abs_diff(&Matrix::identity(k))?;
    Ok(EquivalenceReport {
        n: x.rows(),
        k,
        max_abs_diff: output.max_abs_diff(&fit.fitted)?,
        rel_frobenius_diff: output.relative_frobenius_diff(&fit.fitted)?,
        whitening_residual,
    })
}
