//! Consistency experiments: sample data over an (n, T) grid, fit, align
//! labels, and summarise the errors.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{DsbmError, Result};
use crate::exact::{exact_mle, MleConfig, MAX_TRANSFER_STATES};
use crate::params::{align_by_pi, gamma_distance, Connectivity, ModelParams};
use crate::report::EstimationReport;
use crate::sampler::{derive_seed, sample_dataset};
use crate::vem::{fit_vem, InitStrategy, VemConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Vem,
    ExactMle,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Vem => "vem",
            Self::ExactMle => "exact-mle",
        })
    }
}

impl FromStr for Estimator {
    type Err = DsbmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vem" => Ok(Self::Vem),
            "exact-mle" => Ok(Self::ExactMle),
            other => Err(DsbmError::Domain(format!("unknown estimator `{other}`"))),
        }
    }
}

/// Reference slopes the fitted rates are compared against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateExponents {
    #[serde(default = "default_pi_exponent")]
    pub pi: f64,
    #[serde(default = "default_gamma_exponent")]
    pub gamma: f64,
}

fn default_pi_exponent() -> f64 {
    -0.25
}

fn default_gamma_exponent() -> f64 {
    -0.5
}

impl Default for RateExponents {
    fn default() -> Self {
        Self {
            pi: default_pi_exponent(),
            gamma: default_gamma_exponent(),
        }
    }
}

fn default_restarts() -> usize {
    4
}

fn default_init() -> InitStrategy {
    InitStrategy::SpectralMeanGraph
}

fn default_tol() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// (n, T) cells.
    pub grid: Vec<[usize; 2]>,
    pub replicates: usize,
    /// True parameters, either inline or as a path relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ModelParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params_file: Option<PathBuf>,
    pub estimator: Estimator,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_init")]
    pub init: InitStrategy,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Share diagonal π entries across time (time-varying truth only).
    #[serde(default)]
    pub tie_diagonal: bool,
    #[serde(default)]
    pub rate_exponents: RateExponents,
    /// Record wall-clock times; off by default so outputs are byte-stable.
    #[serde(default)]
    pub record_timing: bool,
}

impl ExperimentConfig {
    /// Parses a config file; relative `params_file` and `output_dir` are
    /// resolved against the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(p) = &cfg.params_file {
            if p.is_relative() {
                cfg.params_file = Some(base.join(p));
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn true_params(&self) -> Result<ModelParams> {
        match (&self.params, &self.params_file) {
            (Some(p), None) => Ok(p.clone()),
            (None, Some(f)) => ModelParams::from_json(&fs::read_to_string(f)?),
            _ => Err(DsbmError::Domain(
                "exactly one of `params` and `params_file` must be given".into(),
            )),
        }
    }

    pub fn validate(&self, truth: &ModelParams) -> Result<()> {
        if self.grid.is_empty() || self.replicates == 0 || self.restarts == 0 {
            return Err(DsbmError::Domain(
                "grid, replicates and restarts must be non-empty".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for &[n, t] in &self.grid {
            if n < 2 || t == 0 {
                return Err(DsbmError::Domain(format!(
                    "grid cell ({n}, {t}) needs n >= 2 and T >= 1"
                )));
            }
            if !seen.insert((n, t)) {
                return Err(DsbmError::Domain(format!("grid cell ({n}, {t}) repeated")));
            }
            truth.check_horizon(t)?;
            if self.estimator == Estimator::ExactMle {
                let states = (truth.q_classes as f64).powi(n as i32);
                if states > MAX_TRANSFER_STATES {
                    return Err(DsbmError::UnsupportedSize {
                        what: "Q^n for exact-mle",
                        size: states,
                        cap: MAX_TRANSFER_STATES,
                    });
                }
            }
        }
        if self.tie_diagonal && !truth.pi.is_time_varying() {
            return Err(DsbmError::Domain(
                "tie_diagonal requires time-varying pi".into(),
            ));
        }
        let report = truth.validate()?;
        if !report.is_valid() {
            return Err(DsbmError::Domain(format!(
                "true parameters are not admissible: {report:?}"
            )));
        }
        Ok(())
    }
}

/// The first T slices of a time-varying truth, or the truth itself.
fn truth_for_horizon(truth: &ModelParams, t_steps: usize) -> ModelParams {
    let mut p = truth.clone();
    if let Connectivity::TimeVarying(s) = &truth.pi {
        p.pi = Connectivity::TimeVarying(s[..t_steps].to_vec());
    }
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub n: usize,
    #[serde(rename = "T")]
    pub t_steps: usize,
    #[serde(rename = "Q")]
    pub q_classes: usize,
    pub replicate: usize,
    pub seed: u64,
    pub estimator: String,
    pub pi_err: f64,
    pub gamma_err: f64,
    pub elbo_or_loglik: f64,
    pub iters: usize,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub n: usize,
    #[serde(rename = "T")]
    pub t_steps: usize,
    pub replicate: usize,
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl Quantiles {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let at = |level: f64| {
            let pos = level * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
        };
        Some(Self {
            min: v[0],
            q25: at(0.25),
            median: at(0.5),
            q75: at(0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub n: usize,
    #[serde(rename = "T")]
    pub t_steps: usize,
    pub successes: usize,
    pub failures: usize,
    pub pi_err: Option<Quantiles>,
    pub gamma_err: Option<Quantiles>,
}

impl CellSummary {
    pub fn failure_rate(&self) -> f64 {
        self.failures as f64 / (self.successes + self.failures).max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateTarget {
    Pi,
    Gamma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub target: RateTarget,
    /// `log n` for π, `log(nT)` for Γ.
    pub abscissa: String,
    pub points: usize,
    pub slope: f64,
    pub intercept: f64,
    /// 95% Student-t intervals.
    pub slope_ci: [f64; 2],
    pub intercept_ci: [f64; 2],
    pub reference_exponent: f64,
    /// slope ≤ reference exponent; informational only.
    pub consistent_with_upper_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub estimator: Estimator,
    #[serde(rename = "Q")]
    pub q_classes: usize,
    pub seed: u64,
    pub rate_exponents: RateExponents,
    pub rows: Vec<ResultRow>,
    pub failures: Vec<FailureRow>,
    pub cells: Vec<CellSummary>,
}

impl ExperimentResult {
    /// Cells where more than half the replicates failed.
    pub fn failing_cells(&self) -> Vec<(usize, usize)> {
        self.cells
            .iter()
            .filter(|c| c.failure_rate() > 0.5)
            .map(|c| (c.n, c.t_steps))
            .collect()
    }
}

fn fit_one(
    cfg: &ExperimentConfig,
    truth: &ModelParams,
    x: &crate::sampler::GraphSequence,
    fit_seed: u64,
) -> Result<EstimationReport> {
    let time_varying = truth.pi.is_time_varying();
    match cfg.estimator {
        Estimator::Vem => fit_vem(
            x,
            truth.q_classes,
            &VemConfig {
                restarts: cfg.restarts,
                init: cfg.init,
                tol: cfg.tol,
                seed: fit_seed,
                delta: truth.delta,
                zeta: truth.zeta,
                time_varying_pi: time_varying,
                tie_diagonal: cfg.tie_diagonal,
                ..VemConfig::default()
            },
        ),
        Estimator::ExactMle => exact_mle(
            x,
            truth.q_classes,
            &MleConfig {
                restarts: cfg.restarts,
                seed: fit_seed,
                delta: truth.delta,
                zeta: truth.zeta,
                time_varying_pi: time_varying,
                ..MleConfig::default()
            },
        ),
    }
}

fn run_replicate(
    cfg: &ExperimentConfig,
    truth: &ModelParams,
    n: usize,
    t_steps: usize,
    rep: usize,
) -> std::result::Result<ResultRow, FailureRow> {
    let tags = [n as u64, t_steps as u64, rep as u64];
    let data_seed = derive_seed(cfg.seed, &[tags[0], tags[1], tags[2], 0]);
    let fit_seed = derive_seed(cfg.seed, &[tags[0], tags[1], tags[2], 1]);
    let start = Instant::now();
    let outcome = (|| -> Result<ResultRow> {
        let (_, x) = sample_dataset(truth, n, t_steps, data_seed)?;
        let report = fit_one(cfg, truth, &x, fit_seed)?;
        let al = align_by_pi(&report.params, truth)?;
        let gamma_err = gamma_distance(&report.params.gamma, &truth.gamma, &al.permutation);
        Ok(ResultRow {
            n,
            t_steps,
            q_classes: truth.q_classes,
            replicate: rep,
            seed: data_seed,
            estimator: cfg.estimator.to_string(),
            pi_err: al.pi_error,
            gamma_err,
            elbo_or_loglik: report.objective,
            iters: report.iterations,
            wall_ms: 0,
        })
    })();
    match outcome {
        Ok(mut row) => {
            if cfg.record_timing {
                row.wall_ms = start.elapsed().as_millis() as u64;
            }
            Ok(row)
        }
        Err(e) => Err(FailureRow {
            n,
            t_steps,
            replicate: rep,
            seed: data_seed,
            reason: e.to_string(),
        }),
    }
}

/// Runs every (cell, replicate) job. Estimator failures are recorded per
/// cell rather than aborting the run.
pub fn run_consistency_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let truth = cfg.true_params()?;
    cfg.validate(&truth)?;
    let mut grid = cfg.grid.clone();
    grid.sort_unstable();
    let jobs: Vec<(usize, usize, usize)> = grid
        .iter()
        .flat_map(|&[n, t]| (0..cfg.replicates).map(move |r| (n, t, r)))
        .collect();
    let outcomes: Vec<_> = jobs
        .par_iter()
        .map(|&(n, t, r)| run_replicate(cfg, &truth_for_horizon(&truth, t), n, t, r))
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(row) => rows.push(row),
            Err(f) => failures.push(f),
        }
    }
    let cells = grid
        .iter()
        .map(|&[n, t]| {
            let mine: Vec<&ResultRow> =
                rows.iter().filter(|r| r.n == n && r.t_steps == t).collect();
            let pi: Vec<f64> = mine.iter().map(|r| r.pi_err).collect();
            let gamma: Vec<f64> = mine.iter().map(|r| r.gamma_err).collect();
            CellSummary {
                n,
                t_steps: t,
                successes: mine.len(),
                failures: failures
                    .iter()
                    .filter(|f| f.n == n && f.t_steps == t)
                    .count(),
                pi_err: Quantiles::of(&pi),
                gamma_err: Quantiles::of(&gamma),
            }
        })
        .collect();
    Ok(ExperimentResult {
        estimator: cfg.estimator,
        q_classes: truth.q_classes,
        seed: cfg.seed,
        rate_exponents: cfg.rate_exponents,
        rows,
        failures,
        cells,
    })
}

/// OLS of log(median error) per cell. π regresses on log n; Γ regresses
/// log(median) − ½ log log n on log(nT).
pub fn rate_regression(result: &ExperimentResult, target: RateTarget) -> Result<RateFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for c in &result.cells {
        let q = match target {
            RateTarget::Pi => c.pi_err,
            RateTarget::Gamma => c.gamma_err,
        };
        let Some(q) = q else { continue };
        if q.median.is_nan() || q.median <= 0.0 {
            return Err(DsbmError::DegenerateGrid(format!(
                "median error is zero at (n, T) = ({}, {})",
                c.n, c.t_steps
            )));
        }
        let n = c.n as f64;
        match target {
            RateTarget::Pi => {
                xs.push(n.ln());
                ys.push(q.median.ln());
            }
            RateTarget::Gamma => {
                if c.n < 3 {
                    return Err(DsbmError::DegenerateGrid("log log n needs n >= 3".into()));
                }
                xs.push((n * c.t_steps as f64).ln());
                ys.push(q.median.ln() - 0.5 * n.ln().ln());
            }
        }
    }
    let reference = match target {
        RateTarget::Pi => result.rate_exponents.pi,
        RateTarget::Gamma => result.rate_exponents.gamma,
    };
    let mut fit = ols(&xs, &ys)?;
    fit.target = target;
    fit.abscissa = match target {
        RateTarget::Pi => "log n",
        RateTarget::Gamma => "log nT",
    }
    .into();
    fit.reference_exponent = reference;
    fit.consistent_with_upper_bound = fit.slope <= reference;
    Ok(fit)
}

fn ols(xs: &[f64], ys: &[f64]) -> Result<RateFit> {
    let distinct: BTreeSet<u64> = xs.iter().map(|x| x.to_bits()).collect();
    if distinct.len() < 3 {
        return Err(DsbmError::DegenerateGrid(format!(
            "{} distinct abscissae; need at least 3",
            distinct.len()
        )));
    }
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let df = k - 2.0;
    let s2 = sse / df;
    let se_slope = (s2 / sxx).sqrt();
    let se_intercept = (s2 * (1.0 / k + mx * mx / sxx)).sqrt();
    let tq = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| DsbmError::Numerical(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(RateFit {
        target: RateTarget::Pi,
        abscissa: String::new(),
        points: xs.len(),
        slope,
        intercept,
        slope_ci: [slope - tq * se_slope, slope + tq * se_slope],
        intercept_ci: [intercept - tq * se_intercept, intercept + tq * se_intercept],
        reference_exponent: 0.0,
        consistent_with_upper_bound: false,
    })
}

pub const RESULTS_HEADER: [&str; 11] = [
    "n",
    "T",
    "Q",
    "replicate",
    "seed",
    "estimator",
    "pi_err",
    "gamma_err",
    "elbo_or_loglik",
    "iters",
    "wall_ms",
];

#[derive(Serialize)]
struct Summary<'a> {
    estimator: Estimator,
    #[serde(rename = "Q")]
    q_classes: usize,
    seed: u64,
    replicates_ok: usize,
    replicates_failed: usize,
    cells: &'a [CellSummary],
    failing_cells: Vec<(usize, usize)>,
    /// Either a fit or the reason it could not be computed.
    rates: Vec<serde_json::Value>,
    failures: &'a [FailureRow],
}

#[derive(Serialize)]
struct PlotRow {
    n: usize,
    #[serde(rename = "T")]
    t_steps: usize,
    #[serde(rename = "nT")]
    nt: usize,
    log_n: f64,
    log_nt: f64,
    pi_err_q25: Option<f64>,
    pi_err_median: Option<f64>,
    pi_err_q75: Option<f64>,
    gamma_err_q25: Option<f64>,
    gamma_err_median: Option<f64>,
    gamma_err_q75: Option<f64>,
    successes: usize,
    failures: usize,
}

/// Writes results.csv, summary.json and plotdata.csv into `dir`.
pub fn emit_outputs(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let results = dir.join("results.csv");
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(&results)?;
    w.write_record(RESULTS_HEADER)?;
    let mut rows = result.rows.clone();
    rows.sort_by_key(|r| (r.n, r.t_steps, r.replicate));
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;

    let rates = [RateTarget::Pi, RateTarget::Gamma]
        .iter()
        .map(|&t| match rate_regression(result, t) {
            Ok(fit) => serde_json::to_value(fit),
            Err(e) => Ok(serde_json::json!({ "target": t, "skipped": e.to_string() })),
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let summary = Summary {
        estimator: result.estimator,
        q_classes: result.q_classes,
        seed: result.seed,
        replicates_ok: result.rows.len(),
        replicates_failed: result.failures.len(),
        cells: &result.cells,
        failing_cells: result.failing_cells(),
        rates,
        failures: &result.failures,
    };
    let summary_path = dir.join("summary.json");
    fs::write(
        &summary_path,
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;

    let plot = dir.join("plotdata.csv");
    let mut w = csv::Writer::from_path(&plot)?;
    for c in &result.cells {
        let nt = c.n * c.t_steps;
        w.serialize(PlotRow {
            n: c.n,
            t_steps: c.t_steps,
            nt,
            log_n: (c.n as f64).ln(),
            log_nt: (nt as f64).ln(),
            pi_err_q25: c.pi_err.map(|q| q.q25),
            pi_err_median: c.pi_err.map(|q| q.median),
            pi_err_q75: c.pi_err.map(|q| q.q75),
            gamma_err_q25: c.gamma_err.map(|q| q.q25),
            gamma_err_median: c.gamma_err.map(|q| q.median),
            gamma_err_q75: c.gamma_err.map(|q| q.q75),
            successes: c.successes,
            failures: c.failures,
        })?;
    }
    w.flush()?;
    Ok(vec![results, summary_path, plot])
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(DsbmError::from))
        .collect()
}
