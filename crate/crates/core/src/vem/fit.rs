//! Multi-restart VEM driver.
//!
//! Each restart runs guarded ascent on 𝒥 (E-step, π M-step, Γ step accepted
//! only when it increases the Γ-dependent part of 𝒥), then optionally
//! polishes to the transition fixed point Γ = Σ η / Σ τ by alternating exact
//! E-steps with the closed-form M-steps.

use rayon::prelude::*;

use super::estep::{ascent_slack, e_step, EStepConfig};
use super::init::{init_tau, InitStrategy};
use super::mstep::{gamma_ratio, m_step_gamma, m_step_pi, PiOptions};
use super::{chain_term, edge_term, VariationalState};
use crate::error::{DsbmError, Result};
use crate::exact::LogPi;
use crate::numeric::{max_abs_diff, project_capped_simplex, xlogy};
use crate::params::{stationary_distribution, ModelParams, DEFAULT_DELTA, DEFAULT_ZETA};
use crate::report::{max_abs, near_boundary, EstimationReport, RestartSummary};
use crate::sampler::{derive_seed, GraphSequence};

const DEGENERATE_MASS: f64 = 1e-6;
const GAMMA_BACKTRACKS: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct VemConfig {
    pub restarts: usize,
    /// Strategy for restart 0; later restarts use random Dirichlet draws.
    pub init: InitStrategy,
    /// Convergence threshold on |Δ𝒥| / (n(n−1)T/2).
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub delta: f64,
    pub zeta: f64,
    pub time_varying_pi: bool,
    pub tie_diagonal: bool,
    pub estep: EStepConfig,
    pub polish: bool,
    pub polish_tol: f64,
    pub polish_max_iters: usize,
    pub polish_estep: EStepConfig,
    pub warm_start: Option<VariationalState>,
    /// Fresh random initialisations tried when a restart collapses a class.
    pub max_resamples: usize,
}

impl Default for VemConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            init: InitStrategy::SpectralMeanGraph,
            tol: 1e-8,
            max_iters: 200,
            seed: 0,
            delta: DEFAULT_DELTA,
            zeta: DEFAULT_ZETA,
            time_varying_pi: false,
            tie_diagonal: false,
            estep: EStepConfig::default(),
            polish: true,
            polish_tol: 1e-10,
            polish_max_iters: 500,
            polish_estep: EStepConfig {
                tol: 1e-13,
                max_sweeps: 500,
                parallel: false,
            },
            warm_start: None,
            max_resamples: 3,
        }
    }
}

/// γ − Σ_{i,t} η^t_iql / Σ_{i,t<T} τ^t_iq.
pub fn vem_gamma_fixed_point_residual(
    params: &ModelParams,
    chi: &VariationalState,
) -> Result<Vec<Vec<f64>>> {
    if chi.t_steps() < 2 {
        return Err(DsbmError::Undefined(
            "the transition fixed point needs T >= 2".into(),
        ));
    }
    if chi.q() != params.q_classes {
        return Err(DsbmError::Shape("state and parameters differ in Q".into()));
    }
    let fp = gamma_ratio(chi)?;
    Ok(params
        .gamma
        .iter()
        .zip(&fp)
        .map(|(g, f)| g.iter().zip(f).map(|(a, b)| a - b).collect())
        .collect())
}

struct RunResult {
    params: ModelParams,
    state: VariationalState,
    objective: f64,
    trace: Vec<f64>,
    polish_trace: Vec<f64>,
    iterations: usize,
    converged: bool,
    projection_events: usize,
}

fn check_mass(chi: &VariationalState) -> Result<()> {
    let floor = DEGENERATE_MASS * (chi.n() * chi.t_steps()) as f64;
    for (q, &m) in chi.class_mass().iter().enumerate() {
        if m < floor {
            return Err(DsbmError::DegenerateClass { class: q, mass: m });
        }
    }
    Ok(())
}

/// Γ-dependent part of 𝒥: Σ_i Σ_q τ¹_iq log α_q(Γ) + Σ η log γ.
fn gamma_objective(gamma: &[Vec<f64>], chi: &VariationalState) -> f64 {
    let Ok(alpha) = stationary_distribution(gamma) else {
        return f64::NEG_INFINITY;
    };
    let q = chi.q();
    let mut s = 0.0;
    for row in &chi.tau[0] {
        for a in 0..q {
            s += xlogy(row[a], alpha.alpha[a]);
        }
    }
    for slice in &chi.eta {
        for e in slice {
            for a in 0..q {
                for b in 0..q {
                    s += xlogy(e[a][b], gamma[a][b]);
                }
            }
        }
    }
    s
}

/// Closed-form Γ candidate: the projected fixed-point ratio, or for T = 1
/// rows equal to the projected mean of τ¹ (whose stationary law is itself).
fn gamma_candidate(chi: &VariationalState, delta: f64) -> Result<(Vec<Vec<f64>>, bool)> {
    if chi.t_steps() >= 2 {
        let g = m_step_gamma(chi, delta)?;
        return Ok((g.gamma, g.projected));
    }
    let q = chi.q();
    if q == 1 {
        return Ok((vec![vec![1.0]], false));
    }
    let n = chi.n() as f64;
    let mean: Vec<f64> = (0..q)
        .map(|a| chi.tau[0].iter().map(|r| r[a]).sum::<f64>() / n)
        .collect();
    let row = project_capped_simplex(&mean, delta, 1.0 - delta);
    let projected = max_abs_diff(std::slice::from_ref(&row), &[mean]) > 0.0;
    Ok((vec![row; q], projected))
}

/// Accepts the candidate when it does not decrease the Γ-dependent part of
/// 𝒥, otherwise backtracks along the segment towards the current Γ.
fn guarded_gamma(
    current: &[Vec<f64>],
    cand: Vec<Vec<f64>>,
    chi: &VariationalState,
) -> Vec<Vec<f64>> {
    let base = gamma_objective(current, chi);
    if gamma_objective(&cand, chi) >= base {
        return cand;
    }
    let mut s = 0.5;
    for _ in 0..GAMMA_BACKTRACKS {
        let mix: Vec<Vec<f64>> = current
            .iter()
            .zip(&cand)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + s * (y - x)).collect())
            .collect();
        if gamma_objective(&mix, chi) >= base {
            return mix;
        }
        s *= 0.5;
    }
    current.to_vec()
}

fn objective(params: &ModelParams, x: &GraphSequence, chi: &VariationalState) -> Result<f64> {
    let alpha = params.stationary_distribution()?.alpha;
    Ok(edge_term(&LogPi::new(params), x, chi) + chain_term(&alpha, &params.gamma, chi))
}

fn run_from(
    x: &GraphSequence,
    q: usize,
    cfg: &VemConfig,
    chi0: VariationalState,
) -> Result<RunResult> {
    let (n, t_steps) = (x.n(), x.t_steps());
    let pairs = (n * (n - 1) / 2 * t_steps).max(1) as f64;
    let pi_opts = PiOptions {
        zeta: cfg.zeta,
        time_varying: cfg.time_varying_pi,
        tie_diagonal: cfg.tie_diagonal,
    };
    check_mass(&chi0)?;
    let mut chi = chi0;
    let mut projection_events = 0;
    let pi_step = m_step_pi(&chi, x, &pi_opts)?;
    let (gamma, gproj) = gamma_candidate(&chi, cfg.delta)?;
    projection_events += usize::from(pi_step.projected) + usize::from(gproj);
    let mut params = ModelParams::new(q, gamma, pi_step.pi, cfg.delta, cfg.zeta)?;
    let mut trace = vec![objective(&params, x, &chi)?];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        let prev = *trace.last().expect("non-empty");
        chi = e_step(&params, x, &chi, &cfg.estep)?.state;
        check_mass(&chi)?;
        let pi_step = m_step_pi(&chi, x, &pi_opts)?;
        params.pi = pi_step.pi;
        let (cand, gproj) = gamma_candidate(&chi, cfg.delta)?;
        projection_events += usize::from(pi_step.projected) + usize::from(gproj);
        params.gamma = guarded_gamma(&params.gamma, cand, &chi);
        let value = objective(&params, x, &chi)?;
        if value < prev - ascent_slack(prev) {
            return Err(DsbmError::Numerical(format!(
                "VEM iteration decreased the ELBO from {prev} to {value}"
            )));
        }
        trace.push(value);
        if (value - prev).abs() / pairs < cfg.tol {
            converged = true;
            break;
        }
    }

    let mut polish_trace = Vec::new();
    if cfg.polish && t_steps >= 2 {
        let mut reached = false;
        for _ in 0..cfg.polish_max_iters {
            chi = e_step(&params, x, &chi, &cfg.polish_estep)?.state;
            check_mass(&chi)?;
            polish_trace.push(objective(&params, x, &chi)?);
            let resid = vem_gamma_fixed_point_residual(&params, &chi)?;
            if max_abs(&resid) < cfg.polish_tol {
                reached = true;
                break;
            }
            let pi_step = m_step_pi(&chi, x, &pi_opts)?;
            let g = m_step_gamma(&chi, cfg.delta)?;
            projection_events += usize::from(pi_step.projected) + usize::from(g.projected);
            let stalled = max_abs_diff(&g.gamma, &params.gamma) < 1e-14
                && pi_step
                    .pi
                    .slices()
                    .iter()
                    .zip(params.pi.slices())
                    .all(|(a, b)| max_abs_diff(a, b) < 1e-14);
            params.pi = pi_step.pi;
            params.gamma = g.gamma;
            if stalled {
                // the projection binds: no interior fixed point nearby
                chi = e_step(&params, x, &chi, &cfg.polish_estep)?.state;
                polish_trace.push(objective(&params, x, &chi)?);
                break;
            }
        }
        converged &= reached;
    }
    let objective = objective(&params, x, &chi)?;
    Ok(RunResult {
        params,
        state: chi,
        objective,
        trace,
        polish_trace,
        iterations,
        converged,
        projection_events,
    })
}

fn run_restart(
    x: &GraphSequence,
    q: usize,
    cfg: &VemConfig,
    r: usize,
) -> (RestartSummary, Option<RunResult>) {
    let mut last_err = String::new();
    for attempt in 0..=cfg.max_resamples {
        let strategy = if r == 0 && attempt == 0 {
            cfg.init
        } else {
            InitStrategy::RandomDirichlet
        };
        let seed = derive_seed(cfg.seed, &[r as u64, attempt as u64]);
        let outcome = init_tau(x, q, strategy, seed, cfg.warm_start.as_ref())
            .and_then(|chi0| run_from(x, q, cfg, chi0));
        match outcome {
            Ok(run) => {
                let summary = RestartSummary {
                    index: r,
                    objective: Some(run.objective),
                    iterations: run.iterations,
                    converged: run.converged,
                    status: if attempt == 0 {
                        "ok".into()
                    } else {
                        format!("ok after {attempt} resample(s)")
                    },
                };
                return (summary, Some(run));
            }
            Err(e @ DsbmError::DegenerateClass { .. }) => last_err = e.to_string(),
            Err(e) => {
                last_err = e.to_string();
                break;
            }
        }
    }
    let summary = RestartSummary {
        index: r,
        objective: None,
        iterations: 0,
        converged: false,
        status: last_err,
    };
    (summary, None)
}

/// Variational EM with `cfg.restarts` restarts; keeps the best final 𝒥.
pub fn fit_vem(x: &GraphSequence, q_classes: usize, cfg: &VemConfig) -> Result<EstimationReport> {
    if q_classes == 0 {
        return Err(DsbmError::Shape("Q must be positive".into()));
    }
    if x.n() < 2 {
        return Err(DsbmError::Shape("need at least two nodes".into()));
    }
    if cfg.tie_diagonal && !cfg.time_varying_pi {
        return Err(DsbmError::Domain(
            "tie_diagonal requires time-varying pi".into(),
        ));
    }
    let restarts = cfg.restarts.max(1);
    let outcomes: Vec<(RestartSummary, Option<RunResult>)> = (0..restarts)
        .into_par_iter()
        .map(|r| run_restart(x, q_classes, cfg, r))
        .collect();
    let mut summaries = Vec::with_capacity(restarts);
    let mut best: Option<(usize, RunResult)> = None;
    for (summary, run) in outcomes {
        let idx = summary.index;
        summaries.push(summary);
        if let Some(run) = run {
            if best
                .as_ref()
                .is_none_or(|(_, b)| run.objective > b.objective)
            {
                best = Some((idx, run));
            }
        }
    }
    let Some((best_restart, run)) = best else {
        let reasons: Vec<String> = summaries.iter().map(|s| s.status.clone()).collect();
        return Err(DsbmError::EstimationFailed {
            attempts: restarts,
            reason: reasons.join("; "),
        });
    };
    let residual = vem_gamma_fixed_point_residual(&run.params, &run.state).ok();
    Ok(EstimationReport {
        estimator: "vem".into(),
        boundary: near_boundary(&run.params),
        objective: run.objective,
        trace: run.trace,
        converged: run.converged,
        iterations: run.iterations,
        polish_trace: run.polish_trace,
        max_abs_residual: residual.as_ref().map(|r| max_abs(r)),
        gamma_residual: residual,
        projection_events: run.projection_events,
        restarts: summaries,
        best_restart,
        alignment: None,
        argmax: None,
        params: run.params,
        wall_ms: 0,
        state: Some(run.state),
    })
}
