//! Seeded random generation.
//!
//! SplitMix64 drives everything; uniforms take the top 53 bits and
//! Gaussians come from Box–Muller. Both conversions are written out here so
//! that sequences stay bit-identical regardless of upstream sampling changes.

use rand_xoshiro::rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::matrix::Matrix;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug)]
pub struct Rng {
    inner: SplitMix64,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: SplitMix64::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    /// Independent generator for stream `index` under `seed`, used to give
    /// every parallel trial its own reproducible sequence.
    pub fn derive(seed: u64, index: u64) -> Self {
        let mut mix = SplitMix64::seed_from_u64(seed ^ index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA));
        Self::new(mix.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int_in(&mut self, lo: usize, hi: usize) -> usize {
        assert!(lo <= hi);
        let span = (hi - lo) as u64 + 1;
        lo + (self.next_u64() % span) as usize
    }

    /// Standard normal draw.
    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - u keeps the log argument in (0, 1].
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }

    pub fn gaussian_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| self.gaussian())
    }

    pub fn uniform_matrix(&mut self, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| self.uniform_in(lo, hi))
    }

    /// Haar-ish random orthogonal matrix from Gram–Schmidt on a Gaussian
    /// matrix (re-orthogonalized twice for accuracy).
    pub fn orthogonal_matrix(&mut self, k: usize) -> Matrix {
        let g = self.gaussian_matrix(k, k);
        let mut cols: Vec<Vec<f64>> = (0..k).map(|j| g.col_values(j)).collect();
        for j in 0..k {
            for _ in 0..2 {
                for p in 0..j {
                    let dot: f64 = cols[j].iter().zip(&cols[p]).map(|(a, b)| a * b).sum();
                    let (head, tail) = cols.split_at_mut(j);
                    for (c, q) in tail[0].iter_mut().zip(&head[p]) {
                        *c -= dot * q;
                    }
                }
            }
            let norm = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
            cols[j].iter_mut().for_each(|v| *v /= norm);
        }
        Matrix::from_fn(k, k, |i, j| cols[j][i])
    }
}
