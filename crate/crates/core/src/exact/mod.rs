//! Exact likelihood, posterior and MAP computations for small instances.
//!
//! Joint configurations of all nodes at one time step are indexed in base Q
//! with node 0 as the most significant digit, so ascending index order is
//! lexicographic order on label vectors. Full paths z^{1:T} are indexed with
//! time 0 as the most significant block.

mod limit;
mod mle;
mod transfer;

pub use limit::{limit_m, limit_m_sup, LimitSup, MAX_LIMIT_Q};
pub use mle::{exact_mle, mle_gamma_fixed_point_residual, MleConfig};
pub use transfer::{exact_loglik_transfer, exact_posterior_marginals, PosteriorMarginals};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DsbmError, Result};
use crate::numeric::LogSumExp;
use crate::params::ModelParams;
use crate::sampler::{GraphSequence, LatentPaths};

/// Cap on Q^{nT} for full enumeration.
pub const MAX_BRUTE_CONFIGS: f64 = 1e7;
/// Cap on Q^n for the per-time joint state space.
pub const MAX_TRANSFER_STATES: f64 = 1e5;

const CHUNK: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLikValue {
    pub value: f64,
    /// Configurations summed (brute force) or joint states per step (transfer).
    pub n_terms: u64,
}

/// log π and log(1 − π) per connectivity slice.
#[derive(Debug, Clone)]
pub(crate) struct LogPi {
    lp: Vec<Vec<Vec<f64>>>,
    lq: Vec<Vec<Vec<f64>>>,
    varying: bool,
}

impl LogPi {
    pub(crate) fn new(params: &ModelParams) -> Self {
        let slices = params.pi.slices();
        let lp = slices
            .iter()
            .map(|p| {
                p.iter()
                    .map(|r| r.iter().map(|v| v.ln()).collect())
                    .collect()
            })
            .collect();
        let lq = slices
            .iter()
            .map(|p| {
                p.iter()
                    .map(|r| r.iter().map(|v| (-v).ln_1p()).collect())
                    .collect()
            })
            .collect();
        Self {
            lp,
            lq,
            varying: params.pi.is_time_varying(),
        }
    }

    /// (log π^t, log(1 − π^t)).
    #[inline]
    pub(crate) fn at(&self, t: usize) -> (&[Vec<f64>], &[Vec<f64>]) {
        let k = if self.varying { t } else { 0 };
        (&self.lp[k], &self.lq[k])
    }
}

pub(crate) fn check_data(params: &ModelParams, x: &GraphSequence) -> Result<()> {
    params.check_shapes()?;
    params.check_horizon(x.t_steps())
}

fn check_paths(params: &ModelParams, z: &LatentPaths, x: &GraphSequence) -> Result<()> {
    check_data(params, x)?;
    if z.n() != x.n() || z.t_steps() != x.t_steps() {
        return Err(DsbmError::Shape(format!(
            "labels are {}x{} but data is {}x{}",
            z.n(),
            z.t_steps(),
            x.n(),
            x.t_steps()
        )));
    }
    z.check_classes(params.q_classes)
}

/// Σ_{i<j} of the edge log-probabilities at time `t` under configuration `c`.
pub(crate) fn slice_loglik(lp: &LogPi, x: &GraphSequence, t: usize, c: &[usize]) -> f64 {
    let (p, q) = lp.at(t);
    let n = c.len();
    let mut s = 0.0;
    for i in 0..n {
        let (pi, qi) = (&p[c[i]], &q[c[i]]);
        for j in (i + 1)..n {
            s += if x.edge(t, i, j) { pi[c[j]] } else { qi[c[j]] };
        }
    }
    s
}

/// Complete-data log-likelihood ℓ_c(θ; z).
pub fn conditional_loglik(params: &ModelParams, z: &LatentPaths, x: &GraphSequence) -> Result<f64> {
    check_paths(params, z, x)?;
    let lp = LogPi::new(params);
    Ok((0..x.t_steps())
        .map(|t| slice_loglik(&lp, x, t, &z.column(t)))
        .sum())
}

/// log P_θ(Z = z) for the stationary Markov membership law.
pub fn latent_prior_loglik(params: &ModelParams, z: &LatentPaths) -> Result<f64> {
    z.check_classes(params.q_classes)?;
    let alpha = params.stationary_distribution()?.alpha;
    let mut s = 0.0;
    for path in z.labels() {
        s += alpha[path[0]].ln();
        for w in path.windows(2) {
            s += params.gamma[w[0]][w[1]].ln();
        }
    }
    Ok(s)
}

/// Q^k as f64 for cap checks, and as usize when below `cap`.
pub(crate) fn checked_states(q: usize, k: usize, cap: f64, what: &'static str) -> Result<usize> {
    let size = (q as f64).powi(k as i32);
    if size > cap {
        return Err(DsbmError::UnsupportedSize { what, size, cap });
    }
    Ok(q.pow(k as u32))
}

/// Writes the base-Q digits of `idx` into `out` (node 0 most significant).
#[inline]
pub(crate) fn decode(mut idx: usize, q: usize, out: &mut [usize]) {
    for d in out.iter_mut().rev() {
        *d = idx % q;
        idx /= q;
    }
}

/// Per-time tables E_t[c] = log P(X^t | Z^t = c) over all Q^n configurations.
pub(crate) fn emission_tables(params: &ModelParams, x: &GraphSequence) -> Result<Vec<Vec<f64>>> {
    emission_tables_capped(params, x, MAX_TRANSFER_STATES)
}

fn emission_tables_capped(
    params: &ModelParams,
    x: &GraphSequence,
    cap: f64,
) -> Result<Vec<Vec<f64>>> {
    let q = params.q_classes;
    let n = x.n();
    let states = checked_states(q, n, cap, "Q^n joint states")?;
    let lp = LogPi::new(params);
    Ok((0..x.t_steps())
        .map(|t| {
            (0..states)
                .into_par_iter()
                .map_init(
                    || vec![0; n],
                    |c, k| {
                        decode(k, q, c);
                        slice_loglik(&lp, x, t, c)
                    },
                )
                .collect()
        })
        .collect())
}

/// Direct evaluator of log P(X, Z = z) for full configurations in
/// path-index order.
struct JointEval {
    q: usize,
    n: usize,
    t_steps: usize,
    states: usize,
    total: usize,
    emissions: Vec<Vec<f64>>,
    la: Vec<f64>,
    lg: Vec<Vec<f64>>,
}

impl JointEval {
    fn new(params: &ModelParams, x: &GraphSequence) -> Result<Self> {
        check_data(params, x)?;
        let q = params.q_classes;
        let (n, t_steps) = (x.n(), x.t_steps());
        let total = checked_states(q, n * t_steps, MAX_BRUTE_CONFIGS, "Q^(nT) configurations")?;
        let alpha = params.stationary_distribution()?.alpha;
        Ok(Self {
            q,
            n,
            t_steps,
            states: q.pow(n as u32),
            total,
            emissions: emission_tables_capped(params, x, MAX_BRUTE_CONFIGS)?,
            la: alpha.iter().map(|a| a.ln()).collect(),
            lg: params
                .gamma
                .iter()
                .map(|r| r.iter().map(|g| g.ln()).collect())
                .collect(),
        })
    }

    fn scratch(&self) -> (Vec<usize>, Vec<Vec<usize>>) {
        (vec![0; self.t_steps], vec![vec![0; self.n]; self.t_steps])
    }

    fn eval(&self, k: usize, cols: &mut [usize], digits: &mut [Vec<usize>]) -> f64 {
        decode(k, self.states, cols);
        let mut s = 0.0;
        for t in 0..self.t_steps {
            s += self.emissions[t][cols[t]];
            decode(cols[t], self.q, &mut digits[t]);
        }
        for i in 0..self.n {
            s += self.la[digits[0][i]];
            for t in 1..self.t_steps {
                s += self.lg[digits[t - 1][i]][digits[t][i]];
            }
        }
        s
    }
}

/// ℓ(θ) by summing over all Q^{nT} latent configurations.
pub fn exact_loglik_bruteforce(params: &ModelParams, x: &GraphSequence) -> Result<LogLikValue> {
    let je = JointEval::new(params, x)?;
    // fixed chunking keeps the reduction order independent of thread count
    let parts: Vec<LogSumExp> = (0..je.total.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let (mut cols, mut digits) = je.scratch();
            let mut acc = LogSumExp::default();
            for k in c * CHUNK..((c + 1) * CHUNK).min(je.total) {
                acc.push(je.eval(k, &mut cols, &mut digits));
            }
            acc
        })
        .collect();
    let mut acc = LogSumExp::default();
    parts.iter().for_each(|p| acc.merge(p));
    Ok(LogLikValue {
        value: acc.value(),
        n_terms: je.total as u64,
    })
}

/// Log posterior of every full configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTable {
    pub q_classes: usize,
    pub n: usize,
    pub t_steps: usize,
    pub log_post: Vec<f64>,
}

impl PosteriorTable {
    pub fn paths(&self, k: usize) -> LatentPaths {
        let states = self.q_classes.pow(self.n as u32);
        let mut cols = vec![0; self.t_steps];
        decode(k, states, &mut cols);
        let columns: Vec<Vec<usize>> = cols
            .iter()
            .map(|&c| {
                let mut d = vec![0; self.n];
                decode(c, self.q_classes, &mut d);
                d
            })
            .collect();
        LatentPaths::from_columns(&columns).expect("non-empty")
    }

    pub fn index_of(&self, z: &LatentPaths) -> usize {
        let mut k = 0;
        for t in 0..self.t_steps {
            for i in 0..self.n {
                k = k * self.q_classes + z.get(i, t);
            }
        }
        k
    }
}

pub fn exact_posterior_table(params: &ModelParams, x: &GraphSequence) -> Result<PosteriorTable> {
    let je = JointEval::new(params, x)?;
    let ll = exact_loglik_bruteforce(params, x)?.value;
    let table = (0..je.total)
        .into_par_iter()
        .map_init(|| je.scratch(), |(c, d), k| je.eval(k, c, d) - ll)
        .collect();
    Ok(PosteriorTable {
        q_classes: params.q_classes,
        n: x.n(),
        t_steps: x.t_steps(),
        log_post: table,
    })
}

/// M_{n,T}(θ) = 2 ℓ(θ) / (n(n−1)T).
pub fn normalized_loglik(params: &ModelParams, x: &GraphSequence) -> Result<f64> {
    let n = x.n();
    if n < 2 {
        return Err(DsbmError::Undefined(
            "normalised likelihood needs n >= 2".into(),
        ));
    }
    let ll = exact_loglik_transfer(params, x)?.value;
    Ok(2.0 * ll / (n * (n - 1) * x.t_steps()) as f64)
}

/// P_θ(Z ≠ z* | X) / P_θ(Z = z* | X); infinite when the posterior mass of z*
/// underflows.
pub fn posterior_ratio(
    params: &ModelParams,
    x: &GraphSequence,
    z_star: &LatentPaths,
) -> Result<f64> {
    let lc = conditional_loglik(params, z_star, x)?;
    let lpri = latent_prior_loglik(params, z_star)?;
    let ll = exact_loglik_transfer(params, x)?.value;
    let log_p = (lc + lpri - ll).min(0.0);
    if log_p == f64::NEG_INFINITY {
        return Ok(f64::INFINITY);
    }
    Ok((-log_p).exp_m1())
}

/// Per-time argmax of the edge likelihood; ties go to the lexicographically
/// smallest label vector.
pub fn map_configuration(params: &ModelParams, x: &GraphSequence) -> Result<LatentPaths> {
    check_data(params, x)?;
    let q = params.q_classes;
    let n = x.n();
    let emissions = emission_tables(params, x)?;
    let columns: Vec<Vec<usize>> = emissions
        .iter()
        .map(|e| {
            let mut best = 0;
            for (k, &v) in e.iter().enumerate() {
                if v > e[best] {
                    best = k;
                }
            }
            let mut c = vec![0; n];
            decode(best, q, &mut c);
            c
        })
        .collect();
    LatentPaths::from_columns(&columns)
}

#[cfg(test)]
mod tests;
