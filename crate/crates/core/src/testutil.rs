//! Random instances shared by unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::params::{Connectivity, ModelParams};
use crate::sampler::{GraphSequence, LatentPaths};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Γ with rows in the interior of [δ, 1−δ] and symmetric π in [ζ, 1−ζ].
pub fn random_params(rng: &mut ChaCha8Rng, q: usize, delta: f64, zeta: f64) -> ModelParams {
    let gamma = (0..q)
        .map(|_| {
            let w: Vec<f64> = (0..q).map(|_| 0.2 + rng.random::<f64>()).collect();
            let s: f64 = w.iter().sum();
            w.iter()
                .map(|v| delta + (1.0 - q as f64 * delta) * v / s)
                .collect()
        })
        .collect();
    let pi = random_pi(rng, q, zeta);
    ModelParams::new(q, gamma, Connectivity::Stationary(pi), delta, zeta).unwrap()
}

pub fn random_pi(rng: &mut ChaCha8Rng, q: usize, zeta: f64) -> Vec<Vec<f64>> {
    let mut pi = vec![vec![0.0; q]; q];
    for a in 0..q {
        for b in a..q {
            let v = zeta + (1.0 - 2.0 * zeta) * rng.random::<f64>();
            pi[a][b] = v;
            pi[b][a] = v;
        }
    }
    pi
}

pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, t_steps: usize, p: f64) -> GraphSequence {
    let mut edges = Vec::new();
    for t in 0..t_steps {
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < p {
                    edges.push([t, i, j]);
                }
            }
        }
    }
    GraphSequence::from_edges(n, t_steps, &edges).unwrap()
}

pub fn random_paths(rng: &mut ChaCha8Rng, n: usize, t_steps: usize, q: usize) -> LatentPaths {
    LatentPaths::new(
        (0..n)
            .map(|_| (0..t_steps).map(|_| rng.random_range(0..q)).collect())
            .collect(),
    )
    .unwrap()
}

/// Naive double loop over all ordered pairs, halved.
pub fn naive_conditional(params: &ModelParams, z: &LatentPaths, x: &GraphSequence) -> f64 {
    let mut s = 0.0;
    for t in 0..x.t_steps() {
        let pi = params.pi_at(t);
        for i in 0..x.n() {
            for j in 0..x.n() {
                if i == j {
                    continue;
                }
                let p = pi[z.get(i, t)][z.get(j, t)];
                s += if x.get(t, i, j) == 1 {
                    p.ln()
                } else {
                    (1.0 - p).ln()
                };
            }
        }
    }
    0.5 * s
}
