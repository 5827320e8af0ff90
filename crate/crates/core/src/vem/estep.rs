//! E-step: block coordinate ascent over nodes. With every other node held
//! fixed, the optimal chain for node i is an exact hidden Markov posterior
//! whose emissions are the mean-field edge log-probabilities.

use rayon::prelude::*;

use super::{chain_term, edge_term, VariationalState};
use crate::error::{DsbmError, Result};
use crate::exact::{check_data, LogPi};
use crate::params::ModelParams;
use crate::sampler::GraphSequence;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EStepConfig {
    /// Stop once no τ entry moves by more than this in a sweep.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Jacobi updates from the previous sweep, in parallel over nodes.
    /// Not monotone in general; the default is sequential Gauss–Seidel.
    pub parallel: bool,
}

impl Default for EStepConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_sweeps: 50,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EStepOutcome {
    pub state: VariationalState,
    pub sweeps: usize,
    pub converged: bool,
    /// 𝒥 before the first sweep and after each sweep.
    pub elbo_trace: Vec<f64>,
}

/// Relative slack allowed for rounding in ascent checks.
pub(crate) fn ascent_slack(v: f64) -> f64 {
    1e-9 * (1.0 + v.abs())
}

/// Emission log-weights e^t(q) for node `i` given the current state.
fn node_emissions(
    lp: &LogPi,
    x: &GraphSequence,
    chi: &VariationalState,
    sums: &[Vec<f64>],
    i: usize,
) -> Vec<Vec<f64>> {
    let q = chi.q();
    (0..chi.t_steps())
        .map(|t| {
            let (p, nq) = lp.at(t);
            let tau = &chi.tau[t];
            let mut nb = vec![0.0; q];
            for &j in x.neighbors(t, i) {
                for (a, v) in nb.iter_mut().zip(&tau[j]) {
                    *a += v;
                }
            }
            (0..q)
                .map(|a| {
                    (0..q)
                        .map(|b| nb[b] * (p[a][b] - nq[a][b]) + (sums[t][b] - tau[i][b]) * nq[a][b])
                        .sum()
                })
                .collect()
        })
        .collect()
}

/// (τ, η) of one chain.
type ChainPosterior = (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>);

/// Exact posterior of a single Q-state chain: (τ, η).
pub(crate) fn chain_posterior(
    alpha: &[f64],
    gamma: &[Vec<f64>],
    emis: &[Vec<f64>],
) -> Result<ChainPosterior> {
    let t_steps = emis.len();
    let q = alpha.len();
    let mut weights = Vec::with_capacity(t_steps);
    let mut filters: Vec<Vec<f64>> = Vec::with_capacity(t_steps);
    let mut scales = Vec::with_capacity(t_steps);
    for t in 0..t_steps {
        let m = emis[t].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(DsbmError::Numerical("non-finite emission weight".into()));
        }
        let w: Vec<f64> = emis[t].iter().map(|e| (e - m).exp()).collect();
        let prior: Vec<f64> = if t == 0 {
            alpha.to_vec()
        } else {
            let f = &filters[t - 1];
            (0..q)
                .map(|l| (0..q).map(|a| f[a] * gamma[a][l]).sum())
                .collect()
        };
        let mut f: Vec<f64> = prior.iter().zip(&w).map(|(a, b)| a * b).collect();
        let s: f64 = f.iter().sum();
        if !(s > 0.0 && s.is_finite()) {
            return Err(DsbmError::Numerical("degenerate forward mass".into()));
        }
        f.iter_mut().for_each(|v| *v /= s);
        filters.push(f);
        weights.push(w);
        scales.push(s);
    }
    let mut backs = vec![vec![1.0; q]; t_steps];
    for t in (0..t_steps - 1).rev() {
        let wb: Vec<f64> = (0..q)
            .map(|l| weights[t + 1][l] * backs[t + 1][l] / scales[t + 1])
            .collect();
        backs[t] = (0..q)
            .map(|a| (0..q).map(|l| gamma[a][l] * wb[l]).sum())
            .collect();
    }
    let tau: Vec<Vec<f64>> = (0..t_steps)
        .map(|t| {
            let mut r: Vec<f64> = filters[t]
                .iter()
                .zip(&backs[t])
                .map(|(a, b)| a * b)
                .collect();
            let s: f64 = r.iter().sum();
            r.iter_mut().for_each(|v| *v /= s);
            r
        })
        .collect();
    let eta = (0..t_steps.saturating_sub(1))
        .map(|t| {
            let wb: Vec<f64> = (0..q)
                .map(|l| weights[t + 1][l] * backs[t + 1][l] / scales[t + 1])
                .collect();
            let mut e: Vec<Vec<f64>> = (0..q)
                .map(|a| {
                    (0..q)
                        .map(|l| filters[t][a] * gamma[a][l] * wb[l])
                        .collect()
                })
                .collect();
            // align the pair table exactly with the singleton marginals
            for a in 0..q {
                let s: f64 = e[a].iter().sum();
                if s > 0.0 {
                    let k = tau[t][a] / s;
                    e[a].iter_mut().for_each(|v| *v *= k);
                }
            }
            e
        })
        .collect();
    Ok((tau, eta))
}

/// Maximises 𝒥(·, θ) over the variational family starting from `init`.
pub fn e_step(
    params: &ModelParams,
    x: &GraphSequence,
    init: &VariationalState,
    cfg: &EStepConfig,
) -> Result<EStepOutcome> {
    check_data(params, x)?;
    if init.t_steps() != x.t_steps() || init.n() != x.n() || init.q() != params.q_classes {
        return Err(DsbmError::Shape("initial state does not match data".into()));
    }
    let alpha = params.stationary_distribution()?.alpha;
    let lp = LogPi::new(params);
    let objective =
        |chi: &VariationalState| edge_term(&lp, x, chi) + chain_term(&alpha, &params.gamma, chi);
    let mut chi = init.clone();
    let mut trace = vec![objective(&chi)];
    let mut converged = false;
    let mut sweeps = 0;
    let n = x.n();
    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        let mut delta: f64 = 0.0;
        if cfg.parallel {
            let sums: Vec<Vec<f64>> = (0..chi.t_steps()).map(|t| chi.class_sums(t)).collect();
            let updates: Vec<_> = (0..n)
                .into_par_iter()
                .map(|i| {
                    chain_posterior(
                        &alpha,
                        &params.gamma,
                        &node_emissions(&lp, x, &chi, &sums, i),
                    )
                })
                .collect::<Result<_>>()?;
            for (i, (tau_i, eta_i)) in updates.into_iter().enumerate() {
                delta = delta.max(replace_node(&mut chi, i, tau_i, eta_i));
            }
        } else {
            let mut sums: Vec<Vec<f64>> = (0..chi.t_steps()).map(|t| chi.class_sums(t)).collect();
            for i in 0..n {
                let emis = node_emissions(&lp, x, &chi, &sums, i);
                let (tau_i, eta_i) = chain_posterior(&alpha, &params.gamma, &emis)?;
                for (t, s) in sums.iter_mut().enumerate() {
                    for (a, v) in s.iter_mut().enumerate() {
                        *v += tau_i[t][a] - chi.tau[t][i][a];
                    }
                }
                delta = delta.max(replace_node(&mut chi, i, tau_i, eta_i));
            }
        }
        let value = objective(&chi);
        let prev = *trace.last().expect("non-empty");
        if !cfg.parallel && value < prev - ascent_slack(prev) {
            return Err(DsbmError::Numerical(format!(
                "E-step decreased the ELBO from {prev} to {value}"
            )));
        }
        trace.push(value);
        if delta < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(EStepOutcome {
        state: chi,
        sweeps,
        converged,
        elbo_trace: trace,
    })
}

fn replace_node(
    chi: &mut VariationalState,
    i: usize,
    tau_i: Vec<Vec<f64>>,
    eta_i: Vec<Vec<Vec<f64>>>,
) -> f64 {
    let mut d: f64 = 0.0;
    for (t, row) in tau_i.into_iter().enumerate() {
        for (a, v) in chi.tau[t][i].iter().zip(&row) {
            d = d.max((a - v).abs());
        }
        chi.tau[t][i] = row;
    }
    for (t, e) in eta_i.into_iter().enumerate() {
        chi.eta[t][i] = e;
    }
    d
}
