use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use super::VariationalState;
use crate::error::{DsbmError, Result};
use crate::sampler::GraphSequence;

const LLOYD_MAX_ITERS: usize = 100;
const ONE_HOT_WEIGHT: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    RandomDirichlet,
    SpectralMeanGraph,
    WarmStart,
}

impl FromStr for InitStrategy {
    type Err = DsbmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random-dirichlet" => Ok(Self::RandomDirichlet),
            "spectral-mean-graph" => Ok(Self::SpectralMeanGraph),
            "warm-start" => Ok(Self::WarmStart),
            other => Err(DsbmError::UnknownStrategy(other.to_string())),
        }
    }
}

impl fmt::Display for InitStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::RandomDirichlet => "random-dirichlet",
            Self::SpectralMeanGraph => "spectral-mean-graph",
            Self::WarmStart => "warm-start",
        })
    }
}

/// Initial variational state. `warm` is required for `WarmStart` and
/// ignored otherwise.
pub fn init_tau(
    x: &GraphSequence,
    q: usize,
    strategy: InitStrategy,
    seed: u64,
    warm: Option<&VariationalState>,
) -> Result<VariationalState> {
    if q == 0 {
        return Err(DsbmError::Shape("Q must be positive".into()));
    }
    let (n, t_steps) = (x.n(), x.t_steps());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = match strategy {
        InitStrategy::RandomDirichlet => (0..t_steps)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        let g: Vec<f64> = (0..q).map(|_| rng.sample::<f64, _>(Exp1)).collect();
                        let s: f64 = g.iter().sum();
                        g.iter().map(|v| v / s).collect()
                    })
                    .collect()
            })
            .collect(),
        InitStrategy::SpectralMeanGraph => {
            let labels = spectral_labels(x, q, &mut rng)?;
            let rows: Vec<Vec<f64>> = labels.iter().map(|&c| smoothed_one_hot(c, q)).collect();
            vec![rows; t_steps]
        }
        InitStrategy::WarmStart => {
            let w = warm.ok_or_else(|| {
                DsbmError::Domain("warm-start needs a previous variational state".into())
            })?;
            if w.t_steps() != t_steps || w.n() != n || w.q() != q {
                return Err(DsbmError::Shape(
                    "warm-start state does not match data".into(),
                ));
            }
            return Ok(w.clone());
        }
    };
    Ok(VariationalState::with_product_eta(tau))
}

fn smoothed_one_hot(c: usize, q: usize) -> Vec<f64> {
    if q == 1 {
        return vec![1.0];
    }
    let off = (1.0 - ONE_HOT_WEIGHT) / (q - 1) as f64;
    (0..q)
        .map(|a| if a == c { ONE_HOT_WEIGHT } else { off })
        .collect()
}

/// Lloyd clustering of the rows of the top-Q eigenvectors (by |eigenvalue|)
/// of the time-averaged adjacency matrix.
fn spectral_labels(x: &GraphSequence, q: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let n = x.n();
    if q == 1 {
        return Ok(vec![0; n]);
    }
    let mean = x.mean_adjacency();
    let m = DMatrix::from_fn(n, n, |i, j| mean[i][j]);
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .abs()
            .total_cmp(&eig.eigenvalues[a].abs())
            .then(a.cmp(&b))
    });
    let k = q.min(n);
    let points: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            order[..k]
                .iter()
                .map(|&c| eig.eigenvectors[(i, c)])
                .collect()
        })
        .collect();
    Ok(kmeans(&points, q, rng))
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding followed by Lloyd iterations.
pub(crate) fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    while centers.len() < k {
        let d: Vec<f64> = points
            .iter()
            .map(|p| {
                centers
                    .iter()
                    .map(|c| dist2(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d.iter().sum();
        let next = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            d.iter()
                .position(|&v| {
                    acc += v;
                    u < acc
                })
                .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[next].clone());
    }
    let mut labels = vec![usize::MAX; n];
    for _ in 0..LLOYD_MAX_ITERS {
        let new: Vec<usize> = points
            .iter()
            .map(|p| {
                (0..k)
                    .min_by(|&a, &b| dist2(p, &centers[a]).total_cmp(&dist2(p, &centers[b])))
                    .expect("k >= 1")
            })
            .collect();
        if new == labels {
            break;
        }
        labels = new;
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == c)
                .map(|(p, _)| p)
                .collect();
            if members.is_empty() {
                continue;
            }
            for (d, v) in center.iter_mut().enumerate() {
                *v = members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    labels
}
