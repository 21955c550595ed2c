//! Randomized regression instances and the equivalence sweep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{equivalence_report_with, EquivalenceReport};
use crate::error::{Error, Result};
use crate::matrix::{empirical_covariance, Matrix};
use crate::rng::Rng;
use crate::spectral::{whitening_factor, DEFAULT_RANK_TOL};

/// Relative Frobenius tolerance the equivalence sweep is judged against.
pub const EQUIVALENCE_TOL: f64 = 1e-8;

/// Noise standard deviation used for the noisy half of random instances.
const INSTANCE_NOISE_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    /// i.i.d. standard normal entries.
    Gaussian,
    /// i.i.d. entries uniform on `[-1, 1]`.
    Uniform,
    /// Gaussian rows whitened so that `(1/n) XᵀX = I` exactly.
    Isotropic,
}

impl Design {
    pub fn as_str(self) -> &'static str {
        match self {
            Design::Gaussian => "gaussian",
            Design::Uniform => "uniform",
            Design::Isotropic => "isotropic",
        }
    }

    pub fn sample(self, rng: &mut Rng, n: usize, k: usize) -> Result<Matrix> {
        match self {
            Design::Gaussian => Ok(rng.gaussian_matrix(n, k)),
            Design::Uniform => Ok(rng.uniform_matrix(n, k, -1.0, 1.0)),
            Design::Isotropic => {
                if n < k {
                    return Err(Error::InvalidArgument(format!(
                        "isotropic design needs n >= k, got n = {n}, k = {k}"
                    )));
                }
                let raw = rng.gaussian_matrix(n, k);
                let factor = whitening_factor(&empirical_covariance(&raw), DEFAULT_RANK_TOL)?;
                raw.matmul(&factor.whitening)
            }
        }
    }
}

/// A random regression problem `Y = Xβ (+ noise)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub x: Matrix,
    pub y: Matrix,
    pub beta: Matrix,
    pub design: Design,
    pub noisy: bool,
}

pub fn random_instance(rng: &mut Rng, n: usize, k: usize, design: Design, noisy: bool) -> Result<Instance> {
    let x = design.sample(rng, n, k)?;
    let beta = rng.gaussian_matrix(k, 1);
    let mut y = x.matmul(&beta)?;
    if noisy {
        y = y.add(&rng.gaussian_matrix(n, 1).scale(INSTANCE_NOISE_STD))?;
    }
    Ok(Instance {
        x,
        y,
        beta,
        design,
        noisy,
    })
}

/// Dimensions and design of sweep trial `index`: `k` uniform in
/// `[1, max_k]`, `n` uniform in `[k + 1, max_n]` (or `n = k` when
/// `max_n = k`). Without a fixed design, trials alternate Gaussian and
/// uniform designs, and every other pair is noisy.
pub fn trial_instance(seed: u64, index: usize, max_n: usize, max_k: usize, design: Option<Design>) -> Result<Instance> {
    if max_k == 0 || max_n < max_k {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= k <= n, got n = {max_n}, k = {max_k}"
        )));
    }
    let mut rng = Rng::derive(seed, index as u64);
    let k = rng.int_in(1, max_k);
    let n = if k < max_n { rng.int_in(k + 1, max_n) } else { max_n };
    let design = design.unwrap_or(if index.is_multiple_of(2) { Design::Gaussian } else { Design::Uniform });
    let noisy = (index / 2) % 2 == 1;
    random_instance(&mut rng, n, k, design, noisy)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceTrial {
    pub trial: usize,
    pub design: Design,
    pub noisy: bool,
    #[serde(flatten)]
    pub report: EquivalenceReport,
}

/// Runs `trials` independent instances in parallel; results are in trial
/// order.
pub fn equivalence_sweep(
    trials: usize,
    max_n: usize,
    max_k: usize,
    seed: u64,
    design: Option<Design>,
    debug_scores: bool,
) -> Result<Vec<EquivalenceTrial>> {
    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let inst = trial_instance(seed, trial, max_n, max_k, design)?;
            let report = equivalence_report_with(&inst.x, &inst.y, debug_scores)?;
            Ok(EquivalenceTrial {
                trial,
                design: inst.design,
                noisy: inst.noisy,
                report,
            })
        })
        .collect()
}
