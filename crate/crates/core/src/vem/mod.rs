//! Variational EM over the family of distributions that are independent
//! across nodes and Markov in time for each node.

mod estep;
mod fit;
mod init;
mod mstep;

pub use estep::{e_step, EStepConfig, EStepOutcome};
pub use fit::{fit_vem, vem_gamma_fixed_point_residual, VemConfig};
pub use init::{init_tau, InitStrategy};
pub use mstep::{m_step_gamma, m_step_pi, GammaStep, PiOptions, PiStep};

use serde::{Deserialize, Serialize};

use crate::error::{DsbmError, Result};
use crate::exact::{check_data, LogPi};
use crate::numeric::{xlogx, xlogy};
use crate::params::ModelParams;
use crate::sampler::{GraphSequence, LatentPaths};

/// Singleton marginals `tau[t][i][q]` and pairwise marginals
/// `eta[t][i][q][l]` of the per-node chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    pub tau: Vec<Vec<Vec<f64>>>,
    pub eta: Vec<Vec<Vec<Vec<f64>>>>,
}

impl VariationalState {
    pub fn t_steps(&self) -> usize {
        self.tau.len()
    }

    pub fn n(&self) -> usize {
        self.tau[0].len()
    }

    pub fn q(&self) -> usize {
        self.tau[0][0].len()
    }

    /// Point mass at the configuration `z`.
    pub fn dirac(z: &LatentPaths, q: usize) -> Self {
        let tau = (0..z.t_steps())
            .map(|t| {
                (0..z.n())
                    .map(|i| (0..q).map(|c| f64::from(z.get(i, t) == c)).collect())
                    .collect()
            })
            .collect();
        Self::with_product_eta(tau)
    }

    /// Pairwise marginals η^t_iql = τ^t_iq τ^{t+1}_il, which are chain
    /// consistent with τ by construction.
    pub fn with_product_eta(tau: Vec<Vec<Vec<f64>>>) -> Self {
        let t_steps = tau.len();
        let eta = (0..t_steps.saturating_sub(1))
            .map(|t| {
                tau[t]
                    .iter()
                    .zip(&tau[t + 1])
                    .map(|(a, b)| {
                        a.iter()
                            .map(|x| b.iter().map(|y| x * y).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self { tau, eta }
    }

    /// Column sums S^t_q = Σ_i τ^t_iq.
    pub(crate) fn class_sums(&self, t: usize) -> Vec<f64> {
        let mut s = vec![0.0; self.q()];
        for row in &self.tau[t] {
            for (a, v) in s.iter_mut().zip(row) {
                *a += v;
            }
        }
        s
    }

    /// Total mass Σ_{i,t} τ^t_iq per class.
    pub fn class_mass(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.q()];
        for t in 0..self.t_steps() {
            for (a, v) in m.iter_mut().zip(self.class_sums(t)) {
                *a += v;
            }
        }
        m
    }

    /// Normalisation, non-negativity and chain consistency within `tol`.
    pub fn check_consistency(&self, tol: f64) -> Result<()> {
        let bad = |what: &str, t: usize, i: usize| {
            Err(DsbmError::Domain(format!(
                "{what} violated at t = {t}, node {i}"
            )))
        };
        let t_steps = self.t_steps();
        if t_steps == 0 || self.eta.len() + 1 != t_steps {
            return Err(DsbmError::Shape("eta must have T - 1 slices".into()));
        }
        let (n, q) = (self.n(), self.q());
        for t in 0..t_steps {
            if self.tau[t].len() != n || self.tau[t].iter().any(|r| r.len() != q) {
                return Err(DsbmError::Shape("tau must be T x n x Q".into()));
            }
            for (i, row) in self.tau[t].iter().enumerate() {
                if row.iter().any(|&v| v < -tol) || (row.iter().sum::<f64>() - 1.0).abs() > tol {
                    return bad("tau normalisation", t, i);
                }
            }
        }
        for t in 0..t_steps - 1 {
            if self.eta[t].len() != n {
                return Err(DsbmError::Shape("eta must be (T-1) x n x Q x Q".into()));
            }
            for i in 0..n {
                let e = &self.eta[t][i];
                if e.len() != q || e.iter().any(|r| r.len() != q) {
                    return Err(DsbmError::Shape("eta must be (T-1) x n x Q x Q".into()));
                }
                if e.iter().flatten().any(|&v| v < -tol) {
                    return bad("eta non-negativity", t, i);
                }
                for a in 0..q {
                    let row: f64 = e[a].iter().sum();
                    let col: f64 = (0..q).map(|b| e[b][a]).sum();
                    if (row - self.tau[t][i][a]).abs() > tol
                        || (col - self.tau[t + 1][i][a]).abs() > tol
                    {
                        return bad("chain consistency", t, i);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn max_abs_tau_diff(&self, other: &VariationalState) -> f64 {
        self.tau
            .iter()
            .flatten()
            .flatten()
            .zip(other.tau.iter().flatten().flatten())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

const STATE_TOL: f64 = 1e-8;

/// Edge part of 𝒥: Σ_t Σ_{i<j} Σ_{q,l} τ_iq τ_jl [X log π + (1 − X) log(1 − π)].
pub(crate) fn edge_term(lp: &LogPi, x: &GraphSequence, chi: &VariationalState) -> f64 {
    let q = chi.q();
    let mut total = 0.0;
    for t in 0..chi.t_steps() {
        let (p, nq) = lp.at(t);
        let tau = &chi.tau[t];
        let s = chi.class_sums(t);
        // all pairs as non-edges: ½ (Sᵀ L S − Σ_i τ_iᵀ L τ_i)
        let mut all = 0.0;
        for a in 0..q {
            for b in 0..q {
                all += s[a] * s[b] * nq[a][b];
            }
        }
        for row in tau {
            for a in 0..q {
                for b in 0..q {
                    all -= row[a] * row[b] * nq[a][b];
                }
            }
        }
        total += 0.5 * all;
        for i in 0..chi.n() {
            for &j in x.neighbors(t, i) {
                if j <= i {
                    continue;
                }
                for a in 0..q {
                    for b in 0..q {
                        total += tau[i][a] * tau[j][b] * (p[a][b] - nq[a][b]);
                    }
                }
            }
        }
    }
    total
}

/// Initial, transition and entropy parts of 𝒥 for the given α and Γ.
pub(crate) fn chain_term(alpha: &[f64], gamma: &[Vec<f64>], chi: &VariationalState) -> f64 {
    let q = chi.q();
    let mut s = 0.0;
    for row in &chi.tau[0] {
        for a in 0..q {
            s += xlogy(row[a], alpha[a]) - xlogx(row[a]);
        }
    }
    for t in 0..chi.eta.len() {
        for (i, e) in chi.eta[t].iter().enumerate() {
            for a in 0..q {
                let ta = chi.tau[t][i][a];
                for b in 0..q {
                    let v = e[a][b];
                    if v > 0.0 {
                        s += v * (gamma[a][b].ln() - v.ln() + ta.ln());
                    }
                }
            }
        }
    }
    s
}

/// Evidence lower bound 𝒥(χ, θ).
pub fn elbo(params: &ModelParams, x: &GraphSequence, chi: &VariationalState) -> Result<f64> {
    check_data(params, x)?;
    if chi.t_steps() != x.t_steps() || chi.n() != x.n() || chi.q() != params.q_classes {
        return Err(DsbmError::Shape(
            "variational state does not match data".into(),
        ));
    }
    chi.check_consistency(STATE_TOL)?;
    let alpha = params.stationary_distribution()?.alpha;
    Ok(edge_term(&LogPi::new(params), x, chi) + chain_term(&alpha, &params.gamma, chi))
}
