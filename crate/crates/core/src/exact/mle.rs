//! Exact maximum likelihood by multi-start quasi-Newton ascent on ℓ in
//! logit coordinates, followed by the fixed-point companion Γ̆.
//!
//! The likelihood maximiser in Γ accounts for the initial law α(Γ), which the
//! transition fixed point ignores. The reported estimate is (Γ̆, π̂): π̂ from
//! the maximiser and Γ̆ the fixed point of the posterior transition
//! frequencies at π̂. The maximiser itself is kept in the report.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_data, exact_loglik_transfer, exact_posterior_marginals};
use crate::error::{DsbmError, Result};
use crate::numeric::project_capped_simplex;
use crate::params::{Connectivity, ModelParams, DEFAULT_DELTA, DEFAULT_ZETA};
use crate::report::{max_abs, near_boundary, ArgmaxSummary, EstimationReport, RestartSummary};
use crate::sampler::GraphSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct MleConfig {
    pub restarts: usize,
    pub seed: u64,
    pub delta: f64,
    pub zeta: f64,
    pub time_varying_pi: bool,
    /// Extra starting point, e.g. a VEM estimate.
    pub warm_start: Option<ModelParams>,
    pub max_iters: usize,
    /// Stop when the sup-norm of the logit gradient falls below this.
    pub grad_tol: f64,
    pub fd_step: f64,
    pub fixed_point_tol: f64,
    pub fixed_point_max_iters: usize,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            seed: 0,
            delta: DEFAULT_DELTA,
            zeta: DEFAULT_ZETA,
            time_varying_pi: false,
            warm_start: None,
            max_iters: 500,
            grad_tol: 1e-7,
            fd_step: 1e-5,
            fixed_point_tol: 1e-12,
            fixed_point_max_iters: 5000,
        }
    }
}

/// Map between unconstrained coordinates and the interior of Θ.
struct Coords {
    q: usize,
    slices: usize,
    delta: f64,
    zeta: f64,
    varying: bool,
}

impl Coords {
    fn n_gamma(&self) -> usize {
        self.q * (self.q - 1)
    }

    fn n_pi(&self) -> usize {
        self.slices * self.q * (self.q + 1) / 2
    }

    fn dim(&self) -> usize {
        self.n_gamma() + self.n_pi()
    }

    fn to_params(&self, u: &[f64]) -> ModelParams {
        let q = self.q;
        let scale = 1.0 - q as f64 * self.delta;
        let mut gamma = vec![vec![0.0; q]; q];
        for (r, row) in gamma.iter_mut().enumerate() {
            let logits: Vec<f64> = (0..q)
                .map(|c| if c + 1 == q { 0.0 } else { u[r * (q - 1) + c] })
                .collect();
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for c in 0..q {
                row[c] = self.delta + scale * e[c] / s;
            }
        }
        let mut k = self.n_gamma();
        let span = 1.0 - 2.0 * self.zeta;
        let mut slices = Vec::with_capacity(self.slices);
        for _ in 0..self.slices {
            let mut p = vec![vec![0.0; q]; q];
            for a in 0..q {
                for b in a..q {
                    let v = self.zeta + span / (1.0 + (-u[k]).exp());
                    p[a][b] = v;
                    p[b][a] = v;
                    k += 1;
                }
            }
            slices.push(p);
        }
        let pi = if self.varying {
            Connectivity::TimeVarying(slices)
        } else {
            Connectivity::Stationary(slices.pop().expect("one slice"))
        };
        ModelParams {
            q_classes: q,
            gamma,
            pi,
            delta: self.delta,
            zeta: self.zeta,
        }
    }

    fn encode(&self, p: &ModelParams) -> Vec<f64> {
        let q = self.q;
        let scale = 1.0 - q as f64 * self.delta;
        let mut u = Vec::with_capacity(self.dim());
        for row in &p.gamma {
            let s: Vec<f64> = row
                .iter()
                .map(|g| ((g - self.delta) / scale).max(1e-9))
                .collect();
            for c in 0..q - 1 {
                u.push((s[c] / s[q - 1]).ln());
            }
        }
        let span = 1.0 - 2.0 * self.zeta;
        for t in 0..self.slices {
            let slice = if p.pi.is_time_varying() {
                p.pi_at(t)
            } else {
                p.pi_at(0)
            };
            for a in 0..q {
                for b in a..q {
                    let s = ((slice[a][b] - self.zeta) / span).clamp(1e-9, 1.0 - 1e-9);
                    u.push((s / (1.0 - s)).ln());
                }
            }
        }
        u
    }
}

struct Run {
    u: Vec<f64>,
    loglik: f64,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn objective(coords: &Coords, x: &GraphSequence, u: &[f64]) -> Result<f64> {
    let ll = exact_loglik_transfer(&coords.to_params(u), x)?.value;
    if !ll.is_finite() {
        return Err(DsbmError::Numerical(format!("log-likelihood {ll}")));
    }
    Ok(ll)
}

fn gradient(coords: &Coords, x: &GraphSequence, u: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut g = vec![0.0; u.len()];
    let mut w = u.to_vec();
    for k in 0..u.len() {
        w[k] = u[k] + h;
        let fp = objective(coords, x, &w)?;
        w[k] = u[k] - h;
        let fm = objective(coords, x, &w)?;
        w[k] = u[k];
        g[k] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// BFGS ascent with Armijo backtracking.
fn ascend(coords: &Coords, x: &GraphSequence, u0: Vec<f64>, cfg: &MleConfig) -> Result<Run> {
    let d = u0.len();
    let mut u = u0;
    let mut f = objective(coords, x, &u)?;
    let mut g = gradient(coords, x, &u, cfg.fd_step)?;
    let mut h = identity(d);
    let mut trace = vec![f];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        if g.iter().all(|v| v.abs() < cfg.grad_tol) {
            converged = true;
            break;
        }
        iterations += 1;
        let mut dir: Vec<f64> = (0..d).map(|i| dot(&h[i], &g)).collect();
        if dot(&dir, &g) <= 0.0 {
            h = identity(d);
            dir = g.clone();
        }
        let norm = dir.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut step = if norm > 5.0 { 5.0 / norm } else { 1.0 };
        let slope = dot(&dir, &g);
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = u.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            let fc = objective(coords, x, &cand)?;
            if fc >= f + 1e-4 * step * slope {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc)) = accepted else {
            if h != identity(d) {
                h = identity(d);
                continue;
            }
            // no ascent along the gradient at working precision
            converged = g.iter().all(|v| v.abs() < 1e3 * cfg.grad_tol);
            break;
        };
        let gc = gradient(coords, x, &cand, cfg.fd_step)?;
        let s: Vec<f64> = cand.iter().zip(&u).map(|(a, b)| a - b).collect();
        // ascent on f is descent on -f: y = -(g_new - g)
        let y: Vec<f64> = g.iter().zip(&gc).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            let hy: Vec<f64> = (0..d).map(|i| dot(&h[i], &y)).collect();
            let yhy = dot(&y, &hy);
            for i in 0..d {
                for j in 0..d {
                    h[i][j] +=
                        (sy + yhy) * s[i] * s[j] / (sy * sy) - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                }
            }
        }
        let gain = fc - f;
        u = cand;
        f = fc;
        g = gc;
        trace.push(f);
        if gain.abs() < 1e-15 * (1.0 + f.abs()) && g.iter().all(|v| v.abs() < 1e3 * cfg.grad_tol) {
            converged = true;
            break;
        }
    }
    Ok(Run {
        u,
        loglik: f,
        trace,
        iterations,
        converged,
    })
}

fn identity(d: usize) -> Vec<Vec<f64>> {
    (0..d)
        .map(|i| (0..d).map(|j| f64::from(i == j)).collect())
        .collect()
}

/// Raw fixed-point map FP(Γ)_ql = Σ P(Z^t=q, Z^{t+1}=l | X) / Σ P(Z^t=q | X).
fn fixed_point_map(params: &ModelParams, x: &GraphSequence) -> Result<Vec<Vec<f64>>> {
    if x.t_steps() < 2 {
        return Err(DsbmError::Undefined(
            "the transition fixed point needs T >= 2".into(),
        ));
    }
    let m = exact_posterior_marginals(params, x)?;
    let q = params.q_classes;
    let mut num = vec![vec![0.0; q]; q];
    let mut den = vec![0.0; q];
    for t in 0..x.t_steps() - 1 {
        for i in 0..x.n() {
            for a in 0..q {
                den[a] += m.tau[t][i][a];
                for l in 0..q {
                    num[a][l] += m.eta[t][i][a][l];
                }
            }
        }
    }
    if let Some(a) = den.iter().position(|&d| d <= 0.0) {
        return Err(DsbmError::DegenerateClass {
            class: a,
            mass: den[a],
        });
    }
    Ok(num
        .iter()
        .zip(&den)
        .map(|(r, d)| r.iter().map(|v| v / d).collect())
        .collect())
}

/// γ_ql − Σ_{t,i} P(Z_i^t=q, Z_i^{t+1}=l | X) / Σ_{t,i} P(Z_i^t=q | X).
pub fn mle_gamma_fixed_point_residual(
    params: &ModelParams,
    x: &GraphSequence,
) -> Result<Vec<Vec<f64>>> {
    check_data(params, x)?;
    let fp = fixed_point_map(params, x)?;
    Ok(params
        .gamma
        .iter()
        .zip(&fp)
        .map(|(g, f)| g.iter().zip(f).map(|(a, b)| a - b).collect())
        .collect())
}

fn closed_form_single_class(x: &GraphSequence, cfg: &MleConfig) -> Result<EstimationReport> {
    let n = x.n();
    let pairs = (n * (n - 1) / 2) as f64;
    let clamp = |v: f64| v.clamp(cfg.zeta, 1.0 - cfg.zeta);
    let t_steps = x.t_steps();
    let pi = if cfg.time_varying_pi {
        Connectivity::TimeVarying(
            (0..t_steps)
                .map(|t| vec![vec![clamp(x.edge_count(t) as f64 / pairs)]])
                .collect(),
        )
    } else {
        let m: usize = (0..t_steps).map(|t| x.edge_count(t)).sum();
        Connectivity::Stationary(vec![vec![clamp(m as f64 / (pairs * t_steps as f64))]])
    };
    let params = ModelParams::new(1, vec![vec![1.0]], pi, cfg.delta, cfg.zeta)?;
    let ll = exact_loglik_transfer(&params, x)?.value;
    let residual = (t_steps >= 2).then(|| vec![vec![0.0]]);
    Ok(EstimationReport {
        estimator: "exact-mle".into(),
        boundary: near_boundary(&params),
        params: params.clone(),
        objective: ll,
        trace: vec![ll],
        converged: true,
        iterations: 0,
        polish_trace: Vec::new(),
        max_abs_residual: residual.as_ref().map(|r| max_abs(r)),
        gamma_residual: residual.clone(),
        projection_events: 0,
        restarts: Vec::new(),
        best_restart: 0,
        alignment: None,
        argmax: Some(ArgmaxSummary {
            params,
            loglik: ll,
            gamma_residual: residual,
        }),
        wall_ms: 0,
        state: None,
    })
}

/// Maximises ℓ over Θ (or Θ^T when `time_varying_pi`).
pub fn exact_mle(x: &GraphSequence, q_classes: usize, cfg: &MleConfig) -> Result<EstimationReport> {
    if q_classes == 0 {
        return Err(DsbmError::Shape("Q must be positive".into()));
    }
    if x.n() < 2 {
        return Err(DsbmError::Shape("need at least two nodes".into()));
    }
    if q_classes == 1 {
        return closed_form_single_class(x, cfg);
    }
    let coords = Coords {
        q: q_classes,
        slices: if cfg.time_varying_pi { x.t_steps() } else { 1 },
        delta: cfg.delta,
        zeta: cfg.zeta,
        varying: cfg.time_varying_pi,
    };
    // feasibility of the exact recursion before any work
    exact_loglik_transfer(&coords.to_params(&vec![0.0; coords.dim()]), x)?;

    let mut starts: Vec<Vec<f64>> = (0..cfg.restarts.max(1))
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(r as u64);
            (0..coords.dim())
                .map(|_| rng.random_range(-2.0..2.0))
                .collect()
        })
        .collect();
    if let Some(w) = &cfg.warm_start {
        if w.q_classes == q_classes && w.pi.is_time_varying() == cfg.time_varying_pi {
            starts.push(coords.encode(w));
        }
    }

    let mut runs = Vec::with_capacity(starts.len());
    let mut summaries = Vec::with_capacity(starts.len());
    for (k, u0) in starts.into_iter().enumerate() {
        match ascend(&coords, x, u0, cfg) {
            Ok(run) => {
                summaries.push(RestartSummary {
                    index: k,
                    objective: Some(run.loglik),
                    iterations: run.iterations,
                    converged: run.converged,
                    status: "ok".into(),
                });
                runs.push((k, run));
            }
            Err(e) => summaries.push(RestartSummary {
                index: k,
                objective: None,
                iterations: 0,
                converged: false,
                status: e.to_string(),
            }),
        }
    }
    let (best_k, best) = runs
        .into_iter()
        .reduce(|a, b| if b.1.loglik > a.1.loglik { b } else { a })
        .ok_or_else(|| DsbmError::EstimationFailed {
            attempts: summaries.len(),
            reason: "every restart failed".into(),
        })?;

    let argmax_params = coords.to_params(&best.u);
    let argmax_residual = mle_gamma_fixed_point_residual(&argmax_params, x).ok();

    // Γ̆: fixed point of the posterior transition frequencies at π̂
    let mut params = argmax_params.clone();
    let mut polish_trace = Vec::new();
    let mut projection_events = 0;
    let mut residual = None;
    if x.t_steps() >= 2 {
        for _ in 0..cfg.fixed_point_max_iters {
            let fp = fixed_point_map(&params, x)?;
            let projected: Vec<Vec<f64>> = fp
                .iter()
                .map(|r| project_capped_simplex(r, cfg.delta, 1.0 - cfg.delta))
                .collect();
            if crate::numeric::max_abs_diff(&projected, &fp) > 0.0 {
                projection_events += 1;
            }
            let change = crate::numeric::max_abs_diff(&projected, &params.gamma);
            params.gamma = projected;
            polish_trace.push(exact_loglik_transfer(&params, x)?.value);
            if change < cfg.fixed_point_tol {
                break;
            }
        }
        residual = Some(mle_gamma_fixed_point_residual(&params, x)?);
    }
    let loglik = exact_loglik_transfer(&params, x)?.value;

    Ok(EstimationReport {
        estimator: "exact-mle".into(),
        boundary: near_boundary(&params),
        objective: loglik,
        trace: best.trace,
        converged: best.converged,
        iterations: best.iterations,
        polish_trace,
        max_abs_residual: residual.as_ref().map(|r| max_abs(r)),
        gamma_residual: residual,
        projection_events,
        restarts: summaries,
        best_restart: best_k,
        alignment: None,
        argmax: Some(ArgmaxSummary {
            params: argmax_params,
            loglik: best.loglik,
            gamma_residual: argmax_residual,
        }),
        params,
        wall_ms: 0,
        state: None,
    })
}
