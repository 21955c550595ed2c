//! Reference computations on raw row-major slices.
//!
//! These deliberately share no code with the library routines they check.

#![allow(dead_code)]

/// Triple-loop product of an `m×k` and a `k×n` matrix.
pub fn naive_matmul(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// `(1/n) XᵀX` by explicit double loop over columns and a sum over rows.
pub fn covariance_by_summation(x: &[f64], n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * k];
    for a in 0..k {
        for b in 0..k {
            let mut acc = 0.0;
            for r in 0..n {
                acc += x[r * k + a] * x[r * k + b];
            }
            out[a * k + b] = acc / n as f64;
        }
    }
    out
}

/// Gauss–Jordan inversion with partial pivoting. Returns `None` for a
/// (numerically) singular input.
pub fn gauss_jordan_inverse(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let w = 2 * n;
    let mut aug = vec![0.0; n * w];
    for i in 0..n {
        for j in 0..n {
            aug[i * w + j] = a[i * n + j];
        }
        aug[i * w + n + i] = 1.0;
    }
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r, &s| aug[r * w + col].abs().total_cmp(&aug[s * w + col].abs()))
            .unwrap();
        if aug[pivot_row * w + col].abs() < 1e-300 {
            return None;
        }
        if pivot_row != col {
            for j in 0..w {
                aug.swap(col * w + j, pivot_row * w + j);
            }
        }
        let p = aug[col * w + col];
        for j in 0..w {
            aug[col * w + j] /= p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = aug[r * w + col];
            if f == 0.0 {
                continue;
            }
            for j in 0..w {
                aug[r * w + j] -= f * aug[col * w + j];
            }
        }
    }
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            inv[i * n + j] = aug[i * w + n + j];
        }
    }
    Some(inv)
}

/// Central finite difference of a scalar function.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

pub fn relative_frobenius(got: &[f64], want: &[f64]) -> f64 {
    let num: f64 = got.iter().zip(want).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = want.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}
