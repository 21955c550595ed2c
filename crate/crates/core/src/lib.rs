//! Single-layer linear attention configured to compute the ordinary least
//! squares estimator exactly.
//!
//! With `Σ = (1/n) XᵀX = VΛVᵀ` and the whitening factor `L = VΛ^(-1/2)`,
//! setting `W_Q = W_K = W_V = L`, `W_FFN = I` and `W_P = (1/n) LᵀXᵀY` makes
//! the attention output `(1/n)(XW_Q)[(XW_K)ᵀ(XW_V)] W_FFN W_P` equal to the
//! OLS fitted values `X(XᵀX)⁻¹XᵀY`.
//!
//! Modules:
//! - [`matrix`], [`spectral`]: dense linear algebra, Jacobi eigendecomposition, Cholesky.
//! - [`ols`]: closed-form least squares.
//! - [`attention`]: the forward pass and the OLS parameter construction.
//! - [`trainer`]: Adam training of the one-dimensional model.
//! - [`memory`]: in-context prediction under covariance shift.
//! - [`experiment`]: random instances and the equivalence sweep.
//! - [`cli`], [`output`]: the `ols-attention` binary.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod matrix;
pub mod memory;
pub mod ols;
pub mod output;
pub mod rng;
pub mod spectral;
pub mod trainer;

#[cfg(test)]
#[path = "../tests/common/oracle.rs"]
mod oracle;

pub use attention::{
    construct_ols_params, equivalence_report, forward, EquivalenceReport, OlsConfiguration, TransformerParams,
};
pub use error::{Error, Result};
pub use matrix::{empirical_covariance, Matrix};
pub use memory::{shift_experiment, ShiftKind, ShiftReport, ShiftSpec};
pub use ols::{ols_fit, OlsFit};
pub use rng::Rng;
pub use spectral::{symmetric_eigendecompose, whitening_factor, Cholesky, SpectralFactor};
pub use trainer::{train, AdamConfig, TrainConfig, TrainingTrace};
