use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the numerical routines and experiments.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    DimensionMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("{0}: matrix contains a non-finite entry")]
    NonFinite(&'static str),

    #[error("rank deficient: smallest eigenvalue {min} is not above {tol:e} times largest eigenvalue {max}")]
    RankDeficient { min: f64, max: f64, tol: f64 },

    #[error("matrix is not positive definite: pivot {index} is {pivot}")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("Jacobi iteration did not converge after {sweeps} sweeps (off-diagonal residual {off_diagonal:e})")]
    NotConverged { sweeps: usize, off_diagonal: f64 },

    #[error("training diverged at epoch {epoch}: L = {l}, loss = {loss}")]
    Diverged { epoch: usize, l: f64, loss: f64 },

    #[error("score-matrix and factored forward passes disagree by {discrepancy:e}")]
    AssociationMismatch { discrepancy: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn mismatch(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            op,
            left_rows: left.0,
            left_cols: left.1,
            right_rows: right.0,
            right_cols: right.1,
        }
    }
}
