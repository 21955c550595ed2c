//! The `ols-attention` command line.
//!
//! ```text
//! ols-attention equiv  [--trials N --n N --k K --seed S --design D --debug-scores]
//! ols-attention train  [--n N --epochs E --lr LR --noise-var V --slope A --l0 L0 ...]
//! ols-attention shift  [--shift-kind scale|rotate|anisotropic --grid lo:hi:step --n N --k K --m M ...]
//! ```
//!
//! Every command writes its report to `--out` (or stdout) as CSV or JSON.
//! Exit codes: 0 success, 1 numerical or equivalence failure, 2 usage error.
//!
//! `train` with no flags is the reference one-dimensional run (`n = 500`,
//! `y = 2x + ε` with `Var ε = 1e-4`, `L₀ = 0.5`, 5000 epochs). The Adam
//! learning rate (0.01) and the uniform `[-1, 1]` input distribution are
//! this tool's own defaults.
//!
//! For `shift`, the context is fresh Gaussian samples recolored to the
//! training covariance and then multiplied on the right by the shift: a
//! `scale` parameter `c` multiplies the entries of `Z`, so `Σ_z = c² Σ_x`;
//! `rotate` is a Givens rotation (radians) of the first two features;
//! `anisotropic` stretches the first feature by the parameter. Training data
//! defaults to an exactly isotropic design.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::error::Error;
use crate::experiment::{equivalence_sweep, random_instance, Design, EQUIVALENCE_TOL};
use crate::memory::{shift_sweep, ShiftKind, ShiftOptions};
use crate::output::{self, fmt_f64};
use crate::rng::Rng;
use crate::trainer::{train, AdamConfig, TrainConfig, XDistribution};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const MAX_GRID_POINTS: usize = 100_000;

#[derive(Debug, Parser)]
#[command(name = "ols-attention", version, about = "Linear attention as a least-squares solver: equivalence, training and shift experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare the attention forward pass with closed-form OLS on random instances.
    Equiv(Flags),
    /// Train the scalar model with Adam and trace its convergence.
    Train(Flags),
    /// Sweep a covariance shift and report in-context prediction error.
    Shift(Flags),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Sample count (upper bound for `equiv`).
    #[arg(long)]
    pub n: Option<usize>,
    /// Feature count (upper bound for `equiv`).
    #[arg(long)]
    pub k: Option<usize>,
    /// Context sample count for `shift` (defaults to n).
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam learning rate.
    #[arg(long, allow_hyphen_values = true)]
    pub lr: Option<f64>,
    /// Noise variance (training targets for `train`, context targets for `shift`).
    #[arg(long = "noise-var", allow_hyphen_values = true)]
    pub noise_var: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub slope: Option<f64>,
    /// Initial value of L.
    #[arg(long, allow_hyphen_values = true)]
    pub l0: Option<f64>,
    #[arg(long = "shift-kind", value_enum)]
    pub shift_kind: Option<ShiftKind>,
    /// Inclusive grid `lo:hi:step`.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Input design. `train` accepts gaussian or uniform.
    #[arg(long, value_enum)]
    pub design: Option<Design>,
    /// Keep every N-th training epoch in the trace.
    #[arg(long = "record-every")]
    pub record_every: Option<usize>,
    /// Also run the forward pass through the n×n score matrix and check both orders agree.
    #[arg(long = "debug-scores")]
    pub debug_scores: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Equiv,
    Train,
    Shift,
}

impl CommandKind {
    fn as_str(self) -> &'static str {
        match self {
            CommandKind::Equiv => "equiv",
            CommandKind::Train => "train",
            CommandKind::Shift => "shift",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Grid {
    pub fn parse(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("grid must look like lo:hi:step, got {s:?}"));
        }
        let num = |p: &str| {
            p.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("bad grid value {p:?}"))
        };
        let grid = Grid {
            lo: num(parts[0])?,
            hi: num(parts[1])?,
            step: num(parts[2])?,
        };
        if !(grid.step > 0.0) || grid.hi < grid.lo {
            return Err(format!("grid needs step > 0 and hi >= lo, got {s:?}"));
        }
        if grid.count() > MAX_GRID_POINTS {
            return Err(format!("grid {s:?} has more than {MAX_GRID_POINTS} points"));
        }
        Ok(grid)
    }

    fn count(&self) -> usize {
        ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1
    }

    /// `lo, lo + step, …` up to and including `hi` (within rounding).
    pub fn values(&self) -> Vec<f64> {
        (0..self.count()).map(|i| self.lo + i as f64 * self.step).collect()
    }
}

impl std::fmt::Display for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}", fmt_f64(self.lo), fmt_f64(self.hi), fmt_f64(self.step))
    }
}

fn default_grid(kind: ShiftKind) -> Grid {
    match kind {
        ShiftKind::Scale | ShiftKind::Anisotropic => Grid {
            lo: 0.5,
            hi: 2.0,
            step: 0.25,
        },
        ShiftKind::Rotate => Grid {
            lo: 0.0,
            hi: 1.57,
            step: 0.785,
        },
    }
}

/// Fully resolved settings of one invocation. Echoed into JSON output so a
/// run can be repeated from its output file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: CommandKind,
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub noise_var: f64,
    pub slope: f64,
    pub l0: f64,
    pub trials: usize,
    pub shift_kind: ShiftKind,
    pub grid: Grid,
    /// `None` for `equiv` means alternating Gaussian and uniform designs.
    pub design: Option<Design>,
    pub record_every: usize,
    pub debug_scores: bool,
    pub format: Format,
    #[serde(skip)]
    pub output_path: Option<PathBuf>,
}

fn usage(msg: impl Into<String>) -> String {
    msg.into()
}

impl RunConfig {
    pub fn resolve(command: CommandKind, f: &Flags) -> Result<Self, String> {
        let train_defaults = TrainConfig::default();
        let n = f.n.unwrap_or(500);
        let k = match command {
            CommandKind::Equiv => f.k.unwrap_or(10),
            CommandKind::Train => f.k.unwrap_or(1),
            CommandKind::Shift => f.k.unwrap_or(4),
        };
        let shift_kind = f.shift_kind.unwrap_or(ShiftKind::Scale);
        let grid = match &f.grid {
            Some(g) => Grid::parse(g).map_err(usage)?,
            None => default_grid(shift_kind),
        };
        let design = match command {
            CommandKind::Equiv => f.design,
            CommandKind::Train => Some(f.design.unwrap_or(Design::Uniform)),
            CommandKind::Shift => Some(f.design.unwrap_or(Design::Isotropic)),
        };
        let cfg = RunConfig {
            command,
            n,
            k,
            m: f.m.unwrap_or(n),
            seed: f.seed.unwrap_or(train_defaults.seed),
            epochs: f.epochs.unwrap_or(train_defaults.epochs),
            lr: f.lr.unwrap_or(train_defaults.adam.lr),
            noise_var: f.noise_var.unwrap_or(match command {
                CommandKind::Shift => 0.0,
                _ => train_defaults.noise_var,
            }),
            slope: f.slope.unwrap_or(train_defaults.slope),
            l0: f.l0.unwrap_or(train_defaults.l0),
            trials: f.trials.unwrap_or(100),
            shift_kind,
            grid,
            design,
            record_every: f.record_every.unwrap_or(1),
            debug_scores: f.debug_scores,
            format: f.format.unwrap_or_default(),
            output_path: f.out.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), String> {
        if self.k == 0 {
            return Err(usage("--k must be at least 1"));
        }
        if self.n == 0 {
            return Err(usage("--n must be at least 1"));
        }
        if !(self.noise_var >= 0.0) {
            return Err(usage("--noise-var must be non-negative"));
        }
        match self.command {
            CommandKind::Equiv => {
                if self.n < self.k {
                    return Err(usage(format!("--n ({}) must be at least --k ({})", self.n, self.k)));
                }
                if self.trials == 0 {
                    return Err(usage("--trials must be at least 1"));
                }
            }
            CommandKind::Train => {
                if self.k != 1 {
                    return Err(usage("train fits the one-dimensional model; --k must be 1"));
                }
                if self.n < 2 {
                    return Err(usage("--n must be at least 2 for train"));
                }
                if self.epochs == 0 {
                    return Err(usage("--epochs must be at least 1"));
                }
                if self.record_every == 0 {
                    return Err(usage("--record-every must be at least 1"));
                }
                if !(self.lr > 0.0) || !self.lr.is_finite() {
                    return Err(usage("--lr must be positive"));
                }
                if !self.l0.is_finite() || !self.slope.is_finite() {
                    return Err(usage("--l0 and --slope must be finite"));
                }
                if self.design == Some(Design::Isotropic) {
                    return Err(usage("train supports --design gaussian or uniform"));
                }
            }
            CommandKind::Shift => {
                if self.n < self.k || self.m < self.k {
                    return Err(usage(format!(
                        "--n ({}) and --m ({}) must be at least --k ({})",
                        self.n, self.m, self.k
                    )));
                }
                if self.shift_kind == ShiftKind::Rotate && self.k < 2 {
                    return Err(usage("rotate needs --k of at least 2"));
                }
                if self.shift_kind != ShiftKind::Rotate && self.grid.values().contains(&0.0) {
                    return Err(usage("scale and anisotropic grids must not contain 0"));
                }
            }
        }
        Ok(())
    }

    fn header_fields(&self) -> Vec<(&'static str, String)> {
        let mut fields = vec![("seed", self.seed.to_string())];
        match self.command {
            CommandKind::Equiv => {
                fields.push(("trials", self.trials.to_string()));
                fields.push(("n", self.n.to_string()));
                fields.push(("k", self.k.to_string()));
                fields.push(("design", self.design.map_or("mixed", Design::as_str).to_string()));
            }
            CommandKind::Train => {
                fields.push(("n", self.n.to_string()));
                fields.push(("epochs", self.epochs.to_string()));
                fields.push(("lr", fmt_f64(self.lr)));
                fields.push(("slope", fmt_f64(self.slope)));
                fields.push(("noise_var", fmt_f64(self.noise_var)));
                fields.push(("l0", fmt_f64(self.l0)));
                fields.push(("design", self.design.map_or("uniform", Design::as_str).to_string()));
                fields.push(("record_every", self.record_every.to_string()));
            }
            CommandKind::Shift => {
                fields.push(("n", self.n.to_string()));
                fields.push(("k", self.k.to_string()));
                fields.push(("m", self.m.to_string()));
                fields.push(("shift_kind", self.shift_kind.as_str().to_string()));
                fields.push(("grid", self.grid.to_string()));
                fields.push(("design", self.design.map_or("isotropic", Design::as_str).to_string()));
                fields.push(("noise_var", fmt_f64(self.noise_var)));
            }
        }
        fields
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            n: self.n,
            slope: self.slope,
            noise_var: self.noise_var,
            seed: self.seed,
            l0: self.l0,
            epochs: self.epochs,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            x_dist: match self.design {
                Some(Design::Gaussian) => XDistribution::Gaussian,
                _ => XDistribution::Uniform,
            },
            record_every: self.record_every,
        }
    }
}

/// Result of a command: the rendered report, summary lines, and exit code.
struct Outcome {
    document: String,
    summary: Vec<String>,
    warnings: Vec<String>,
    code: i32,
}

fn run_equiv(cfg: &RunConfig) -> Result<Outcome, Error> {
    let trials = equivalence_sweep(cfg.trials, cfg.n, cfg.k, cfg.seed, cfg.design, cfg.debug_scores)?;
    let max_rel = trials.iter().map(|t| t.report.rel_frobenius_diff).fold(0.0, f64::max);
    let max_white = trials.iter().map(|t| t.report.whitening_residual).fold(0.0, f64::max);
    let failures = trials
        .iter()
        .filter(|t| !(t.report.rel_frobenius_diff <= EQUIVALENCE_TOL))
        .count();
    let passed = failures == 0;
    let summary = json!({
        "trials": trials.len(),
        "max_rel_frobenius_diff": max_rel,
        "max_whitening_residual": max_white,
        "tolerance": EQUIVALENCE_TOL,
        "failures": failures,
        "passed": passed,
    });
    let document = match cfg.format {
        Format::Csv => output::equiv_csv(&cfg.header_fields(), &trials),
        Format::Json => output::equiv_json(cfg, &trials, &summary),
    };
    Ok(Outcome {
        document,
        summary: vec![
            format!("trials: {}", trials.len()),
            format!("max relative difference: {}", fmt_f64(max_rel)),
            format!("max whitening residual: {}", fmt_f64(max_white)),
            format!(
                "equivalence within {}: {}",
                fmt_f64(EQUIVALENCE_TOL),
                if passed { "yes".to_string() } else { format!("NO ({failures} failing trials)") }
            ),
        ],
        warnings: vec![],
        code: if passed { EXIT_OK } else { EXIT_FAILURE },
    })
}

fn crossing_text(epoch: Option<usize>) -> String {
    epoch.map_or_else(|| "never".to_string(), |e| e.to_string())
}

fn run_train(cfg: &RunConfig) -> Result<Outcome, Error> {
    let trace = train(&cfg.train_config())?;
    let last = *trace.last().expect("at least one epoch is recorded");
    let structural = trace.structural_error(&last);
    let s_cross = trace.structural_crossing(1e-2);
    let f_cross = trace.functional_crossing(1e-2);
    let summary = json!({
        "final_mse": last.mse,
        "final_rel_dist_to_ols": last.rel_dist_to_ols,
        "final_l": last.l_value,
        "final_rel_l_error": structural,
        "structural_crossing_1e-2": s_cross,
        "functional_crossing_1e-2": f_cross,
    });
    let document = match cfg.format {
        Format::Csv => output::train_csv(&cfg.header_fields(), &trace),
        Format::Json => output::train_json(cfg, &trace, &summary),
    };
    Ok(Outcome {
        document,
        summary: vec![
            format!("epochs: {}", last.epoch),
            format!("L*: {}", fmt_f64(trace.l_star)),
            format!("final L: {}", fmt_f64(last.l_value)),
            format!("final MSE: {}", fmt_f64(last.mse)),
            format!("final |L-L*|/L*: {}", fmt_f64(structural)),
            format!("final relative distance to OLS: {}", fmt_f64(last.rel_dist_to_ols)),
            format!("first epoch with |L-L*|/L* < 1e-2: {}", crossing_text(s_cross)),
            format!("first epoch with relative distance < 1e-2: {}", crossing_text(f_cross)),
        ],
        warnings: trace.warnings.clone(),
        code: EXIT_OK,
    })
}

fn run_shift(cfg: &RunConfig) -> Result<Outcome, Error> {
    let design = cfg.design.unwrap_or(Design::Isotropic);
    let mut rng = Rng::new(cfg.seed);
    let inst = random_instance(&mut rng, cfg.n, cfg.k, design, false)?;
    let options = ShiftOptions {
        m: Some(cfg.m),
        context_noise_std: cfg.noise_var.sqrt(),
    };
    let grid = cfg.grid.values();
    let context_seed = rng.next_u64();
    let points = shift_sweep(&inst.x, &inst.y, cfg.shift_kind, &grid, context_seed, options)?;
    let max_err = points.iter().map(|p| p.row.relative_error).fold(0.0, f64::max);
    let summary = json!({
        "points": points.len(),
        "max_relative_error": max_err,
        "beta_true": inst.beta.as_slice(),
    });
    let document = match cfg.format {
        Format::Csv => output::shift_csv(&cfg.header_fields(), &points),
        Format::Json => output::shift_json(cfg, &points, &summary),
    };
    let mut lines = vec![format!("points: {}", points.len())];
    lines.extend(points.iter().map(|p| {
        format!(
            "{} {}: relative error {}",
            p.row.shift_kind.as_str(),
            fmt_f64(p.row.shift_param),
            fmt_f64(p.row.relative_error)
        )
    }));
    Ok(Outcome {
        document,
        summary: lines,
        warnings: if cfg.noise_var > 0.0 {
            vec!["context targets carry noise; the distortion law assumes noise-free contexts".into()]
        } else {
            vec![]
        },
        code: EXIT_OK,
    })
}

/// Executes a parsed command line. The report goes to `--out` when given
/// (summary to `out`), otherwise to `out` (summary to `err`).
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let (kind, flags) = match &cli.command {
        Command::Equiv(f) => (CommandKind::Equiv, f),
        Command::Train(f) => (CommandKind::Train, f),
        Command::Shift(f) => (CommandKind::Shift, f),
    };
    let cfg = match RunConfig::resolve(kind, flags) {
        Ok(cfg) => cfg,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}\n\nUsage: ols-attention {} [OPTIONS]\nFor more information, try '--help'.", kind.as_str());
            return EXIT_USAGE;
        }
    };
    let outcome = match cfg.command {
        CommandKind::Equiv => run_equiv(&cfg),
        CommandKind::Train => run_train(&cfg),
        CommandKind::Shift => run_shift(&cfg),
    };
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_FAILURE;
        }
    };
    for w in &outcome.warnings {
        let _ = writeln!(err, "warning: {w}");
    }
    let summary_sink: &mut dyn Write = match &cfg.output_path {
        Some(path) => {
            if let Err(e) = fs::write(path, outcome.document.as_bytes()) {
                let _ = writeln!(err, "error: cannot write {}: {e}", path.display());
                return EXIT_FAILURE;
            }
            out
        }
        None => {
            let _ = out.write_all(outcome.document.as_bytes());
            err
        }
    };
    for line in &outcome.summary {
        let _ = writeln!(summary_sink, "{line}");
    }
    outcome.code
}
