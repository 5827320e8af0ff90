//! Monte Carlo and exhaustive checks of the combinatorial and concentration
//! bounds that drive the consistency results.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DsbmError, Result};
use crate::params::{Connectivity, ModelParams};
use crate::sampler::{
    count_summary, derive_seed, omega_eta_member, sample_latent_paths, LatentPaths,
};

/// Number of (i, t) with differing labels.
pub fn hamming(z_a: &LatentPaths, z_b: &LatentPaths) -> Result<usize> {
    if z_a.n() != z_b.n() || z_a.t_steps() != z_b.t_steps() {
        return Err(DsbmError::Shape("latent paths differ in shape".into()));
    }
    Ok(z_a
        .labels()
        .iter()
        .zip(z_b.labels())
        .map(|(a, b)| a.iter().zip(b).filter(|(x, y)| x != y).count())
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub r: usize,
    /// Triples (i < j, t) where the two configurations select different π entries.
    pub d_size: usize,
    /// (δ − η)² n r / 4
    pub lower_bound: f64,
    /// 2 n r
    pub upper_bound: f64,
}

impl DiscrepancyReport {
    pub fn lower_holds(&self) -> bool {
        self.d_size as f64 >= self.lower_bound
    }

    pub fn upper_holds(&self) -> bool {
        self.d_size as f64 <= self.upper_bound
    }
}

pub fn discrepancy_set_size(
    z: &LatentPaths,
    z_star: &LatentPaths,
    pi: &Connectivity,
    delta: f64,
    eta: f64,
) -> Result<DiscrepancyReport> {
    let r = hamming(z, z_star)?;
    let (n, t_steps) = (z.n(), z.t_steps());
    if pi.is_time_varying() && pi.n_slices() < t_steps {
        return Err(DsbmError::Shape("fewer π slices than time steps".into()));
    }
    let q = pi.at(0).len();
    z.check_classes(q)?;
    z_star.check_classes(q)?;
    let mut d_size = 0;
    for t in 0..t_steps {
        let p = pi.at(t);
        for i in 0..n {
            let (a, a_star) = (z.get(i, t), z_star.get(i, t));
            for j in (i + 1)..n {
                if p[a][z.get(j, t)] != p[a_star][z_star.get(j, t)] {
                    d_size += 1;
                }
            }
        }
    }
    let nr = (n * r) as f64;
    Ok(DiscrepancyReport {
        r,
        d_size,
        lower_bound: (delta - eta).powi(2) * nr / 4.0,
        upper_bound: 2.0 * nr,
    })
}

/// Outcome of randomised discrepancy instances around sampled z* ∈ Ω_η.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancySuite {
    pub instances: usize,
    /// Draws of z* rejected because they fell outside Ω_η.
    pub rejected: usize,
    pub lower_violations: usize,
    pub upper_violations: usize,
    /// min over instances of |D| − lower bound (among r > 0).
    pub min_lower_slack: f64,
    /// min over instances of upper bound − |D|.
    pub min_upper_slack: f64,
    /// The lower bound can fail when two π entries coincide.
    pub pi_entries_distinct: bool,
}

const MAX_REJECTIONS: usize = 100_000;

/// Samples z* from the model (redrawn until it lies in Ω_η), perturbs a
/// uniformly chosen number of (i, t) entries to get z, and checks both
/// bounds on |D|.
pub fn discrepancy_suite(
    params: &ModelParams,
    n: usize,
    t_steps: usize,
    instances: usize,
    eta: f64,
    seed: u64,
) -> Result<DiscrepancySuite> {
    check_eta(params, eta)?;
    let alpha = params.stationary_distribution()?;
    let q = params.q_classes;
    let outcomes: Vec<(usize, DiscrepancyReport)> = (0..instances)
        .into_par_iter()
        .map(|k| -> Result<_> {
            let mut rejected = 0;
            let z_star = loop {
                let s = derive_seed(seed, &[k as u64, rejected as u64]);
                let z = sample_latent_paths(params, n, t_steps, s)?;
                if omega_eta_member(&z, &alpha, eta)? {
                    break z;
                }
                rejected += 1;
                if rejected >= MAX_REJECTIONS {
                    return Err(DsbmError::Domain(format!(
                        "no draw in Omega_eta after {MAX_REJECTIONS} attempts; increase n or eta"
                    )));
                }
            };
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[k as u64, u64::MAX]));
            let mut z = z_star.clone();
            if q > 1 {
                let flips = rng.random_range(0..=n * t_steps);
                for _ in 0..flips {
                    let (i, t) = (rng.random_range(0..n), rng.random_range(0..t_steps));
                    let shift = rng.random_range(1..q);
                    z.set(i, t, (z.get(i, t) + shift) % q);
                }
            }
            let rep = discrepancy_set_size(&z, &z_star, &params.pi, params.delta, eta)?;
            Ok((rejected, rep))
        })
        .collect::<Result<_>>()?;
    let mut suite = DiscrepancySuite {
        instances,
        rejected: 0,
        lower_violations: 0,
        upper_violations: 0,
        min_lower_slack: f64::INFINITY,
        min_upper_slack: f64::INFINITY,
        pi_entries_distinct: pi_entries_distinct(&params.pi),
    };
    for (rejected, rep) in outcomes {
        suite.rejected += rejected;
        suite.lower_violations += usize::from(!rep.lower_holds());
        suite.upper_violations += usize::from(!rep.upper_holds());
        if rep.r > 0 {
            suite.min_lower_slack = suite
                .min_lower_slack
                .min(rep.d_size as f64 - rep.lower_bound);
        }
        suite.min_upper_slack = suite
            .min_upper_slack
            .min(rep.upper_bound - rep.d_size as f64);
    }
    Ok(suite)
}

/// Whether the upper-triangular entries of every slice are pairwise distinct.
pub fn pi_entries_distinct(pi: &Connectivity) -> bool {
    pi.slices().iter().all(|s| {
        let q = s.len();
        let mut v: Vec<f64> = (0..q).flat_map(|a| (a..q).map(move |b| s[a][b])).collect();
        v.sort_by(f64::total_cmp);
        v.windows(2).all(|w| w[0] != w[1])
    })
}

/// Monte Carlo estimate paired with a theoretical bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub estimate: f64,
    pub std_error: f64,
    pub bound: f64,
    /// estimate ≤ bound + 3 standard errors
    pub pass: bool,
}

impl BoundCheck {
    fn new(samples: &[f64], bound: f64) -> Self {
        let (estimate, std_error) = mean_se(samples);
        Self {
            estimate,
            std_error,
            bound,
            pass: estimate <= bound + 3.0 * std_error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionCheck {
    /// Entry (q, l) whose mean deviation is largest relative to its bound.
    pub worst: [usize; 2],
    pub check: BoundCheck,
    /// Every entry passes its own bound.
    pub all_pass: bool,
    /// (level, quantile) of max_{q,l} |N_ql / (n(T−1)) − α_q γ_ql| over replicates.
    pub quantiles: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub n: usize,
    #[serde(rename = "T")]
    pub t_steps: usize,
    #[serde(rename = "Q")]
    pub q_classes: usize,
    pub eta: f64,
    pub replicates: usize,
    /// P(Ω_η fails) against Q T exp(−2 η² n).
    pub omega_failure: BoundCheck,
    /// E|N_ql / (n(T−1)) − α_q γ_ql| against sqrt(α_q γ_ql (1 + 2/c) / (n(T−1))),
    /// where c = Σ_l min_q γ_ql is the Doeblin constant of Γ. Absent for T = 1.
    pub transitions: Option<TransitionCheck>,
    /// max_{q,l} E|N_q (N_l − 1[q = l]) / (n(n−1)) − α_q α_l| at the first
    /// time step against 2√n / (n−1).
    pub occupancy_moment: BoundCheck,
}

impl ConcentrationReport {
    pub fn all_pass(&self) -> bool {
        self.omega_failure.pass
            && self.occupancy_moment.pass
            && self.transitions.as_ref().is_none_or(|t| t.all_pass)
    }
}

const QUANTILE_LEVELS: [f64; 4] = [0.5, 0.9, 0.99, 1.0];

fn check_eta(params: &ModelParams, eta: f64) -> Result<()> {
    params.check_shapes()?;
    if !(eta > 0.0 && eta < params.delta) {
        return Err(DsbmError::Domain(format!(
            "eta = {eta} must lie in (0, delta = {})",
            params.delta
        )));
    }
    Ok(())
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / m;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Empirical quantile with linear interpolation between order statistics.
fn quantile(sorted: &[f64], level: f64) -> f64 {
    let pos = level * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

struct Replicate {
    omega_fail: bool,
    transitions: Vec<Vec<f64>>,
    occupancy: Vec<Vec<f64>>,
}

pub fn concentration_report(
    params: &ModelParams,
    n: usize,
    t_steps: usize,
    replicates: usize,
    seed: u64,
    eta: f64,
) -> Result<ConcentrationReport> {
    check_eta(params, eta)?;
    if n < 2 || t_steps == 0 || replicates == 0 {
        return Err(DsbmError::Shape(
            "need n >= 2, T >= 1 and at least one replicate".into(),
        ));
    }
    let stat = params.stationary_distribution()?;
    let alpha = &stat.alpha;
    let gamma = &params.gamma;
    let q = params.q_classes;
    let nf = n as f64;
    let trans_den = (n * t_steps.saturating_sub(1)) as f64;
    let reps: Vec<Replicate> = (0..replicates)
        .into_par_iter()
        .map(|r| -> Result<Replicate> {
            let z = sample_latent_paths(params, n, t_steps, derive_seed(seed, &[r as u64]))?;
            let counts = count_summary(&z, q)?;
            let transitions = (0..q)
                .map(|a| {
                    (0..q)
                        .map(|b| {
                            (counts.n_ql[a][b] as f64 / trans_den - alpha[a] * gamma[a][b]).abs()
                        })
                        .collect()
                })
                .collect();
            let occ = &counts.n_q[0];
            let occupancy = (0..q)
                .map(|a| {
                    (0..q)
                        .map(|b| {
                            // ordered pairs of distinct nodes
                            let same = usize::from(a == b);
                            let prod = occ[a] as f64 * (occ[b] - same.min(occ[b])) as f64
                                / (nf * (nf - 1.0));
                            (prod - alpha[a] * alpha[b]).abs()
                        })
                        .collect()
                })
                .collect();
            Ok(Replicate {
                omega_fail: !omega_eta_member(&z, &stat, eta)?,
                transitions,
                occupancy,
            })
        })
        .collect::<Result<_>>()?;

    let fails: Vec<f64> = reps
        .iter()
        .map(|r| f64::from(u8::from(r.omega_fail)))
        .collect();
    let omega_bound = (q * t_steps) as f64 * (-2.0 * eta * eta * nf).exp();
    let omega_failure = BoundCheck::new(&fails, omega_bound);

    let entry = |sel: &dyn Fn(&Replicate) -> f64| reps.iter().map(sel).collect::<Vec<f64>>();
    let moment_bound = 2.0 * nf.sqrt() / (nf - 1.0);
    let mut occupancy_moment: Option<BoundCheck> = None;
    for a in 0..q {
        for b in 0..q {
            let c = BoundCheck::new(&entry(&|r| r.occupancy[a][b]), moment_bound);
            if occupancy_moment
                .as_ref()
                .is_none_or(|o| c.estimate > o.estimate)
            {
                occupancy_moment = Some(c);
            }
        }
    }
    let mut occupancy_moment = occupancy_moment.expect("Q >= 1");
    occupancy_moment.pass = (0..q).all(|a| {
        (0..q).all(|b| BoundCheck::new(&entry(&|r| r.occupancy[a][b]), moment_bound).pass)
    });

    let transitions = (t_steps >= 2).then(|| {
        let doeblin: f64 = (0..q)
            .map(|b| (0..q).map(|a| gamma[a][b]).fold(f64::INFINITY, f64::min))
            .sum();
        let mut worst = [0, 0];
        let mut worst_ratio = f64::NEG_INFINITY;
        let mut worst_check = None;
        let mut all_pass = true;
        for a in 0..q {
            for b in 0..q {
                let p = alpha[a] * gamma[a][b];
                let bound = (p * (1.0 + 2.0 / doeblin) / trans_den).sqrt();
                let c = BoundCheck::new(&entry(&|r| r.transitions[a][b]), bound);
                all_pass &= c.pass;
                let ratio = if bound > 0.0 {
                    c.estimate / bound
                } else {
                    c.estimate
                };
                if ratio > worst_ratio {
                    worst_ratio = ratio;
                    worst = [a, b];
                    worst_check = Some(c);
                }
            }
        }
        let mut maxima = entry(&|r| r.transitions.iter().flatten().fold(0.0, |m, &v| m.max(v)));
        maxima.sort_by(f64::total_cmp);
        TransitionCheck {
            worst,
            check: worst_check.expect("Q >= 1"),
            all_pass,
            quantiles: QUANTILE_LEVELS
                .iter()
                .map(|&l| (l, quantile(&maxima, l)))
                .collect(),
        }
    });

    Ok(ConcentrationReport {
        n,
        t_steps,
        q_classes: q,
        eta,
        replicates,
        omega_failure,
        transitions,
        occupancy_moment,
    })
}
