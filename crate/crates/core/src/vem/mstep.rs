//! Closed-form M-steps for π and Γ given a variational state.

use super::VariationalState;
use crate::error::{DsbmError, Result};
use crate::numeric::project_capped_simplex;
use crate::params::Connectivity;
use crate::sampler::GraphSequence;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiOptions {
    pub zeta: f64,
    pub time_varying: bool,
    /// Share each diagonal entry across time (time-varying mode only).
    pub tie_diagonal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiStep {
    pub pi: Connectivity,
    /// Some raw ratio fell outside [ζ, 1 − ζ] and was clamped.
    pub projected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaStep {
    /// Σ η / Σ τ before projection.
    pub raw: Vec<Vec<f64>>,
    /// Rows projected onto the capped simplex [δ, 1 − δ].
    pub gamma: Vec<Vec<f64>>,
    pub projected: bool,
}

/// (edges, pairs) expected block counts for one time step.
type PairCounts = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Expected edge counts and pair counts per time step, over ordered pairs.
fn block_counts(chi: &VariationalState, x: &GraphSequence, t: usize) -> PairCounts {
    let q = chi.q();
    let tau = &chi.tau[t];
    let s = chi.class_sums(t);
    let mut num = vec![vec![0.0; q]; q];
    let mut den = vec![vec![0.0; q]; q];
    for a in 0..q {
        for b in 0..q {
            den[a][b] = s[a] * s[b];
        }
    }
    for (i, row) in tau.iter().enumerate() {
        let mut nb = vec![0.0; q];
        for &j in x.neighbors(t, i) {
            for (acc, v) in nb.iter_mut().zip(&tau[j]) {
                *acc += v;
            }
        }
        for a in 0..q {
            for b in 0..q {
                num[a][b] += row[a] * nb[b];
                den[a][b] -= row[a] * row[b];
            }
        }
    }
    (num, den)
}

/// π̂_ql = expected edges / expected pairs between classes q and l, clamped
/// to [ζ, 1 − ζ]; pooled over t unless `time_varying`.
pub fn m_step_pi(chi: &VariationalState, x: &GraphSequence, opts: &PiOptions) -> Result<PiStep> {
    if chi.t_steps() != x.t_steps() || chi.n() != x.n() {
        return Err(DsbmError::Shape(
            "variational state does not match data".into(),
        ));
    }
    let q = chi.q();
    let counts: Vec<_> = (0..x.t_steps()).map(|t| block_counts(chi, x, t)).collect();
    let mut projected = false;
    let mut ratio = |num: f64, den: f64, a: usize| -> Result<f64> {
        if den <= 0.0 {
            return Err(DsbmError::DegenerateClass {
                class: a,
                mass: den,
            });
        }
        let r = num / den;
        let c = r.clamp(opts.zeta, 1.0 - opts.zeta);
        if c != r {
            projected = true;
        }
        Ok(c)
    };
    let pooled = |sel: &dyn Fn(&PairCounts) -> (f64, f64)| {
        counts
            .iter()
            .map(sel)
            .fold((0.0, 0.0), |acc, v| (acc.0 + v.0, acc.1 + v.1))
    };
    if !opts.time_varying {
        let mut pi = vec![vec![0.0; q]; q];
        for a in 0..q {
            for b in a..q {
                let (nu, de) = pooled(&|c| (c.0[a][b], c.1[a][b]));
                let v = ratio(nu, de, a)?;
                pi[a][b] = v;
                pi[b][a] = v;
            }
        }
        return Ok(PiStep {
            pi: Connectivity::Stationary(pi),
            projected,
        });
    }
    let mut slices = Vec::with_capacity(counts.len());
    for (num, den) in &counts {
        let mut pi = vec![vec![0.0; q]; q];
        for a in 0..q {
            for b in a..q {
                let v = if a == b && opts.tie_diagonal {
                    let (nu, de) = pooled(&|c| (c.0[a][a], c.1[a][a]));
                    ratio(nu, de, a)?
                } else {
                    ratio(num[a][b], den[a][b], a)?
                };
                pi[a][b] = v;
                pi[b][a] = v;
            }
        }
        slices.push(pi);
    }
    Ok(PiStep {
        pi: Connectivity::TimeVarying(slices),
        projected,
    })
}

/// Σ_{i,t} η^t_iql / Σ_{i,t<T} τ^t_iq; rows then projected to [δ, 1 − δ].
pub fn m_step_gamma(chi: &VariationalState, delta: f64) -> Result<GammaStep> {
    if chi.t_steps() < 2 {
        return Err(DsbmError::Undefined(
            "the transition M-step needs T >= 2".into(),
        ));
    }
    let raw = gamma_ratio(chi)?;
    // a single class has nothing to bound
    let gamma: Vec<Vec<f64>> = if chi.q() == 1 {
        vec![vec![1.0]]
    } else {
        raw.iter()
            .map(|r| project_capped_simplex(r, delta, 1.0 - delta))
            .collect()
    };
    let projected = crate::numeric::max_abs_diff(&gamma, &raw) > 0.0;
    Ok(GammaStep {
        raw,
        gamma,
        projected,
    })
}

pub(crate) fn gamma_ratio(chi: &VariationalState) -> Result<Vec<Vec<f64>>> {
    let q = chi.q();
    let mut num = vec![vec![0.0; q]; q];
    let mut den = vec![0.0; q];
    for (t, slice) in chi.eta.iter().enumerate() {
        for (i, e) in slice.iter().enumerate() {
            for a in 0..q {
                den[a] += chi.tau[t][i][a];
                for b in 0..q {
                    num[a][b] += e[a][b];
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
