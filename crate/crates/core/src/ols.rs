//! Closed-form ordinary least squares.
//!
//! [`ols_fit`] solves the normal equations by Cholesky and never touches the
//! spectral machinery, so it can serve as an independent reference for the
//! attention route. [`hat_projection`] computes the same fitted values
//! through the whitening factor instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{empirical_covariance, Matrix};
use crate::spectral::{whitening_factor, Cholesky, DEFAULT_RANK_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    /// `k × 1` coefficients.
    pub beta: Matrix,
    /// `n × 1` fitted values `Xβ`.
    pub fitted: Matrix,
    /// `‖Y − Xβ‖₂`.
    pub residual_norm: f64,
}

fn check_response(x: &Matrix, y: &Matrix) -> Result<()> {
    if y.rows() != x.rows() || y.cols() != 1 {
        return Err(Error::mismatch("regression response", x.shape(), y.shape()));
    }
    Ok(())
}

/// `β = (XᵀX)⁻¹XᵀY` via Cholesky on the normal equations, `Ŷ = Xβ`.
pub fn ols_fit(x: &Matrix, y: &Matrix) -> Result<OlsFit> {
    check_response(x, y)?;
    let gram = x.t_matmul(x)?.symmetrized()?;
    let xty = x.t_matmul(y)?;
    let beta = Cholesky::with_rank_tol(&gram, DEFAULT_RANK_TOL)?.solve(&xty)?;
    let fitted = x.matmul(&beta)?;
    let residual_norm = y.sub(&fitted)?.frobenius_norm();
    Ok(OlsFit {
        beta,
        fitted,
        residual_norm,
    })
}

/// `Ŷ = (1/n)(XL)(LᵀXᵀ)Y`, grouped as `(XL) · ((1/n)(XL)ᵀY)`.
pub fn hat_projection(x: &Matrix, y: &Matrix) -> Result<Matrix> {
    check_response(x, y)?;
    let n = x.rows() as f64;
    let factor = whitening_factor(&empirical_covariance(x), DEFAULT_RANK_TOL)?;
    let xl = x.matmul(&factor.whitening)?;
    let coords = xl.t_matmul(y)?.scale(1.0 / n);
    xl.matmul(&coords)
}
