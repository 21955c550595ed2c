//! Symmetric eigendecomposition, whitening factors and Cholesky solves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Jacobi stops once the largest off-diagonal entry is at most this multiple
/// of the largest diagonal entry.
pub const JACOBI_TOL: f64 = 1e-12;

/// Sweep budget for cyclic Jacobi.
pub const MAX_SWEEPS: usize = 100;

/// Smallest admissible `λ_min / λ_max` for a covariance to count as full
/// rank.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Inputs whose max-abs asymmetry exceeds this (relative to the largest
/// entry) are rejected as non-symmetric.
const SYMMETRY_TOL: f64 = 1e-12;

/// Eigenvectors (as columns) and eigenvalues of a symmetric matrix, sorted
/// by descending eigenvalue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eigen {
    pub eigenvectors: Matrix,
    pub eigenvalues: Vec<f64>,
}

/// Spectral decomposition `Σ = VΛVᵀ` plus the whitening factor
/// `L = VΛ^(-1/2)`, so that `LLᵀ = Σ⁻¹`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralFactor {
    pub eigenvectors: Matrix,
    pub eigenvalues: Vec<f64>,
    pub whitening: Matrix,
}

impl SpectralFactor {
    /// `LLᵀ`, the inverse of the decomposed matrix.
    pub fn inverse(&self) -> Matrix {
        self.whitening
            .matmul_t(&self.whitening)
            .expect("L is square")
    }

    /// `Λ^(1/2) Vᵀ`, the inverse of `L`. Its Gram matrix is the decomposed
    /// matrix itself.
    pub fn coloring(&self) -> Matrix {
        let k = self.eigenvalues.len();
        Matrix::from_fn(k, k, |i, j| self.eigenvalues[i].sqrt() * self.eigenvectors[(j, i)])
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Eigenvalues come back in descending order. Each eigenvector is signed so
/// that its largest-magnitude component (the first one, on ties) is positive.
pub fn symmetric_eigendecompose(m: &Matrix, tol: f64) -> Result<Eigen> {
    if !m.is_square() {
        return Err(Error::mismatch("symmetric_eigendecompose", m.shape(), (m.cols(), m.rows())));
    }
    if m.asymmetry() > SYMMETRY_TOL * m.max_abs().max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidArgument(format!(
            "matrix is not symmetric (asymmetry {:e})",
            m.asymmetry()
        )));
    }
    let n = m.rows();
    let mut a = m.symmetrized()?;
    let mut v = Matrix::identity(n);

    let mut converged = false;
    let mut off = max_off_diagonal(&a);
    for sweep in 0..MAX_SWEEPS {
        let scale = (0..n).fold(0.0_f64, |s, i| s.max(a[(i, i)].abs()));
        if off <= tol * scale || off == 0.0 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                // After a few sweeps, entries too small to change either
                // diagonal are simply dropped.
                let negligible = 100.0 * apq.abs();
                if sweep > 3
                    && a[(p, p)].abs() + negligible == a[(p, p)].abs()
                    && a[(q, q)].abs() + negligible == a[(q, q)].abs()
                {
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    continue;
                }
                rotate(&mut a, &mut v, p, q);
            }
        }
        off = max_off_diagonal(&a);
    }
    if !converged {
        let scale = (0..n).fold(0.0_f64, |s, i| s.max(a[(i, i)].abs()));
        if !(off <= tol * scale || off == 0.0) {
            return Err(Error::NotConverged {
                sweeps: MAX_SWEEPS,
                off_diagonal: off,
            });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut eigenvectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    for c in 0..n {
        let mut lead = 0;
        for r in 1..n {
            if eigenvectors[(r, c)].abs() > eigenvectors[(lead, c)].abs() {
                lead = r;
            }
        }
        if eigenvectors[(lead, c)] < 0.0 {
            for r in 0..n {
                eigenvectors[(r, c)] = -eigenvectors[(r, c)];
            }
        }
    }
    Ok(Eigen {
        eigenvectors,
        eigenvalues,
    })
}

fn max_off_diagonal(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max(a[(i, j)].abs());
        }
    }
    worst
}

/// One Jacobi rotation annihilating `a[p][q]`, accumulated into `v`.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let n = a.rows();
    let apq = a[(p, q)];
    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
    let t = if theta.is_finite() && theta.abs() < 1e150 {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    } else {
        0.5 / theta
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    a[(p, p)] -= t * apq;
    a[(q, q)] += t * apq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for r in 0..n {
        if r == p || r == q {
            continue;
        }
        let arp = a[(r, p)];
        let arq = a[(r, q)];
        let new_rp = c * arp - s * arq;
        let new_rq = s * arp + c * arq;
        a[(r, p)] = new_rp;
        a[(p, r)] = new_rp;
        a[(r, q)] = new_rq;
        a[(q, r)] = new_rq;
    }
    for r in 0..n {
        let vrp = v[(r, p)];
        let vrq = v[(r, q)];
        v[(r, p)] = c * vrp - s * vrq;
        v[(r, q)] = s * vrp + c * vrq;
    }
}

/// Spectral whitening factor `L = VΛ^(-1/2)` of a symmetric positive
/// definite covariance.
///
/// Fails with [`Error::RankDeficient`] when `λ_min ≤ rank_tol · λ_max`.
pub fn whitening_factor(cov: &Matrix, rank_tol: f64) -> Result<SpectralFactor> {
    let Eigen {
        eigenvectors,
        eigenvalues,
    } = symmetric_eigendecompose(cov, JACOBI_TOL)?;
    let max = eigenvalues[0];
    let min = eigenvalues[eigenvalues.len() - 1];
    if !(max > 0.0 && min > rank_tol * max) {
        return Err(Error::RankDeficient {
            min,
            max,
            tol: rank_tol,
        });
    }
    let inv_sqrt: Vec<f64> = eigenvalues.iter().map(|l| 1.0 / l.sqrt()).collect();
    let k = eigenvalues.len();
    let whitening = Matrix::from_fn(k, k, |i, j| eigenvectors[(i, j)] * inv_sqrt[j]);
    Ok(SpectralFactor {
        eigenvectors,
        eigenvalues,
        whitening,
    })
}

/// Lower-triangular Cholesky factor `G` with `GGᵀ = A`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Matrix,
}

impl Cholesky {
    /// Factors `a`, failing on the first non-positive pivot.
    pub fn new(a: &Matrix) -> Result<Self> {
        Self::factor(a, None)
    }

    /// Factors `a` and additionally reports [`Error::RankDeficient`] when the
    /// smallest pivot is at most `rank_tol` times the largest.
    pub fn with_rank_tol(a: &Matrix, rank_tol: f64) -> Result<Self> {
        Self::factor(a, Some(rank_tol))
    }

    fn factor(a: &Matrix, rank_tol: Option<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::mismatch("cholesky", a.shape(), (a.cols(), a.rows())));
        }
        let n = a.rows();
        let mut g = Matrix::zeros(n, n);
        let mut pivots = Vec::with_capacity(n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for p in 0..j {
                d -= g[(j, p)] * g[(j, p)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return match rank_tol {
                    Some(tol) => Err(Error::RankDeficient {
                        min: d,
                        max: pivots.iter().copied().fold(d, f64::max),
                        tol,
                    }),
                    None => Err(Error::NotPositiveDefinite { index: j, pivot: d }),
                };
            }
            pivots.push(d);
            let gjj = d.sqrt();
            g[(j, j)] = gjj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for p in 0..j {
                    s -= g[(i, p)] * g[(j, p)];
                }
                g[(i, j)] = s / gjj;
            }
        }
        if let Some(tol) = rank_tol {
            let max = pivots.iter().copied().fold(0.0, f64::max);
            let min = pivots.iter().copied().fold(f64::INFINITY, f64::min);
            if min <= tol * max {
                return Err(Error::RankDeficient { min, max, tol });
            }
        }
        Ok(Self { lower: g })
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    /// Solves `A X = B` for every column of `b`.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        let n = self.lower.rows();
        if b.rows() != n {
            return Err(Error::mismatch("cholesky solve", self.lower.shape(), b.shape()));
        }
        let g = &self.lower;
        let mut x = b.clone();
        for c in 0..b.cols() {
            // G y = b
            for i in 0..n {
                let mut s = x[(i, c)];
                for p in 0..i {
                    s -= g[(i, p)] * x[(p, c)];
                }
                x[(i, c)] = s / g[(i, i)];
            }
            // Gᵀ x = y
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for p in (i + 1)..n {
                    s -= g[(p, i)] * x[(p, c)];
                }
                x[(i, c)] = s / g[(i, i)];
            }
        }
        Ok(x)
    }
}

/// Solves `a x = b` for symmetric positive definite `a`.
pub fn solve_spd(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    Cholesky::new(a)?.solve(b)
}
