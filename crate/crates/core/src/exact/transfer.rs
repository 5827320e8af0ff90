//! Forward–backward recursion over the joint state space of all nodes.
//!
//! The joint transition kernel factorises over nodes, so one step applies Γ
//! digit by digit at cost n·Q^{n+1} rather than Q^{2n}.

use rayon::prelude::*;
use serde::Serialize;

use super::{check_data, emission_tables, LogLikValue};
use crate::error::{DsbmError, Result};
use crate::params::ModelParams;
use crate::sampler::GraphSequence;

/// v ← v K restricted to every node except `skip` (forward direction).
fn propagate_forward(v: &mut [f64], gamma: &[Vec<f64>], q: usize, n: usize, skip: Option<usize>) {
    let mut buf = vec![0.0; q];
    for k in (0..n).filter(|&k| Some(k) != skip) {
        let stride = q.pow((n - 1 - k) as u32);
        let block = stride * q;
        for start in (0..v.len()).step_by(block) {
            for off in 0..stride {
                let base = start + off;
                for (l, b) in buf.iter_mut().enumerate() {
                    *b = (0..q).map(|a| v[base + a * stride] * gamma[a][l]).sum();
                }
                for (l, &b) in buf.iter().enumerate() {
                    v[base + l * stride] = b;
                }
            }
        }
    }
}

/// v ← K v (backward direction).
fn propagate_backward(v: &mut [f64], gamma: &[Vec<f64>], q: usize, n: usize) {
    let mut buf = vec![0.0; q];
    for k in 0..n {
        let stride = q.pow((n - 1 - k) as u32);
        let block = stride * q;
        for start in (0..v.len()).step_by(block) {
            for off in 0..stride {
                let base = start + off;
                for (a, b) in buf.iter_mut().enumerate() {
                    *b = (0..q).map(|l| gamma[a][l] * v[base + l * stride]).sum();
                }
                for (a, &b) in buf.iter().enumerate() {
                    v[base + a * stride] = b;
                }
            }
        }
    }
}

fn initial_law(alpha: &[f64], q: usize, n: usize) -> Vec<f64> {
    let mut v = vec![1.0];
    for _ in 0..n {
        v = v
            .iter()
            .flat_map(|&w| (0..q).map(move |a| w * alpha[a]))
            .collect();
    }
    v
}

/// Scaled forward pass: normalised filters, emission weights shifted by
/// their maximum, the mass removed at each step and its full log value.
struct Forward {
    filters: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
    scales: Vec<f64>,
    log_norm: Vec<f64>,
}

fn forward(params: &ModelParams, x: &GraphSequence, keep: bool) -> Result<Forward> {
    check_data(params, x)?;
    let q = params.q_classes;
    let n = x.n();
    let emissions = emission_tables(params, x)?;
    let alpha = params.stationary_distribution()?.alpha;
    let mut filters = Vec::new();
    let mut weights = Vec::new();
    let mut scales = Vec::with_capacity(x.t_steps());
    let mut log_norm = Vec::with_capacity(x.t_steps());
    let mut f = initial_law(&alpha, q, n);
    for (t, e) in emissions.iter().enumerate() {
        if t > 0 {
            propagate_forward(&mut f, &params.gamma, q, n, None);
        }
        let m = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(DsbmError::Numerical(format!(
                "no finite emission at t = {t}"
            )));
        }
        let w: Vec<f64> = e.iter().map(|&v| (v - m).exp()).collect();
        f.iter_mut().zip(&w).for_each(|(a, b)| *a *= b);
        let s: f64 = f.iter().sum();
        if !(s > 0.0 && s.is_finite()) {
            return Err(DsbmError::Numerical(format!("forward mass {s} at t = {t}")));
        }
        f.iter_mut().for_each(|a| *a /= s);
        scales.push(s);
        log_norm.push(m + s.ln());
        if keep {
            filters.push(f.clone());
            weights.push(w);
        }
    }
    Ok(Forward {
        filters,
        weights,
        scales,
        log_norm,
    })
}

/// ℓ(θ) by the forward recursion over the Q^n joint states.
pub fn exact_loglik_transfer(params: &ModelParams, x: &GraphSequence) -> Result<LogLikValue> {
    let fw = forward(params, x, false)?;
    Ok(LogLikValue {
        value: fw.log_norm.iter().sum(),
        n_terms: params.q_classes.pow(x.n() as u32) as u64,
    })
}

/// Exact posterior marginals P(Z_i^t = q | X) as `tau[t][i][q]` and
/// P(Z_i^t = q, Z_i^{t+1} = l | X) as `eta[t][i][q][l]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorMarginals {
    pub loglik: f64,
    pub tau: Vec<Vec<Vec<f64>>>,
    pub eta: Vec<Vec<Vec<Vec<f64>>>>,
}

pub fn exact_posterior_marginals(
    params: &ModelParams,
    x: &GraphSequence,
) -> Result<PosteriorMarginals> {
    let fw = forward(params, x, true)?;
    let q = params.q_classes;
    let n = x.n();
    let t_steps = x.t_steps();
    let states = fw.filters[0].len();

    // scaled backward messages
    let mut backs = vec![vec![1.0; states]; t_steps];
    for t in (0..t_steps - 1).rev() {
        let s = fw.scales[t + 1];
        let mut b: Vec<f64> = backs[t + 1]
            .iter()
            .zip(&fw.weights[t + 1])
            .map(|(b, w)| b * w / s)
            .collect();
        propagate_backward(&mut b, &params.gamma, q, n);
        backs[t] = b;
    }

    let node_marginals = |post: &[f64]| -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; q]; n];
        for (k, &p) in post.iter().enumerate() {
            let mut idx = k;
            for i in (0..n).rev() {
                m[i][idx % q] += p;
                idx /= q;
            }
        }
        m
    };

    let tau: Vec<Vec<Vec<f64>>> = (0..t_steps)
        .map(|t| {
            let mut post: Vec<f64> = fw.filters[t]
                .iter()
                .zip(&backs[t])
                .map(|(a, b)| a * b)
                .collect();
            let s: f64 = post.iter().sum();
            post.iter_mut().for_each(|p| *p /= s);
            node_marginals(&post)
        })
        .collect();

    let eta: Vec<Vec<Vec<Vec<f64>>>> = (0..t_steps.saturating_sub(1))
        .map(|t| {
            let s = fw.scales[t + 1];
            let w: Vec<f64> = backs[t + 1]
                .iter()
                .zip(&fw.weights[t + 1])
                .map(|(b, e)| b * e / s)
                .collect();
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut u = fw.filters[t].clone();
                    propagate_forward(&mut u, &params.gamma, q, n, Some(i));
                    let stride = q.pow((n - 1 - i) as u32);
                    let block = stride * q;
                    let mut pair = vec![vec![0.0; q]; q];
                    for start in (0..states).step_by(block) {
                        for off in 0..stride {
                            let base = start + off;
                            for a in 0..q {
                                let ua = u[base + a * stride];
                                for l in 0..q {
                                    pair[a][l] += ua * w[base + l * stride];
                                }
                            }
                        }
                    }
                    for a in 0..q {
                        for l in 0..q {
                            pair[a][l] *= params.gamma[a][l];
                        }
                    }
                    let tot: f64 = pair.iter().flatten().sum();
                    pair.iter_mut().flatten().for_each(|p| *p /= tot);
                    pair
                })
                .collect()
        })
        .collect();

    Ok(PosteriorMarginals {
        loglik: fw.log_norm.iter().sum(),
        tau,
        eta,
    })
}
