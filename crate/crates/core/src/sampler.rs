//! Simulation of latent membership chains and conditional Bernoulli graphs,
//! plus the occupancy and transition counts derived from a labelling.
//!
//! Stream layout: every draw comes from a `ChaCha8Rng` seeded with the user
//! seed. Node `i`'s chain uses stream `i`; the graph at time `t` uses stream
//! `2^32 + t` and consumes one `u64` per pair `i < j` in row-major order.
//! Parallel and serial generation therefore agree bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DsbmError, Result};
use crate::params::{ModelParams, StationaryDist};

const GRAPH_STREAM_BASE: u64 = 1 << 32;

pub fn node_rng(seed: u64, node: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(node as u64);
    rng
}

pub fn graph_rng(seed: u64, t: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(GRAPH_STREAM_BASE + t as u64);
    rng
}

/// Mixes a base seed with tags (SplitMix64 finaliser) into an independent
/// seed, e.g. one per grid cell and replicate.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    tags.iter()
        .fold(mix(seed.wrapping_add(0x9e37_79b9_7f4a_7c15)), |acc, &t| {
            mix(acc ^ t.wrapping_add(0x9e37_79b9_7f4a_7c15))
        })
}

/// Inverse-CDF draw from a probability vector.
pub fn categorical(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    // rounding left u above the final partial sum
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Class labels `labels[i][t]`, 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPaths")]
pub struct LatentPaths {
    labels: Vec<Vec<usize>>,
}

#[derive(Deserialize)]
struct RawPaths {
    labels: Vec<Vec<usize>>,
}

impl TryFrom<RawPaths> for LatentPaths {
    type Error = DsbmError;
    fn try_from(raw: RawPaths) -> Result<Self> {
        LatentPaths::new(raw.labels)
    }
}

impl LatentPaths {
    pub fn new(labels: Vec<Vec<usize>>) -> Result<Self> {
        let t = labels.first().map_or(0, Vec::len);
        if labels.is_empty() || t == 0 || labels.iter().any(|r| r.len() != t) {
            return Err(DsbmError::Shape(
                "labels must be a non-empty n x T array".into(),
            ));
        }
        Ok(Self { labels })
    }

    /// Paths of `n` nodes, each constant equal to `class` for `t_steps` steps.
    pub fn constant(n: usize, t_steps: usize, class: usize) -> Self {
        Self {
            labels: vec![vec![class; t_steps]; n],
        }
    }

    /// Builds paths from per-time configurations `columns[t][i]`.
    pub fn from_columns(columns: &[Vec<usize>]) -> Result<Self> {
        let t_steps = columns.len();
        let n = columns.first().map_or(0, Vec::len);
        Self::new(
            (0..n)
                .map(|i| (0..t_steps).map(|t| columns[t][i]).collect())
                .collect(),
        )
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn t_steps(&self) -> usize {
        self.labels[0].len()
    }

    #[inline]
    pub fn get(&self, i: usize, t: usize) -> usize {
        self.labels[i][t]
    }

    pub fn set(&mut self, i: usize, t: usize, q: usize) {
        self.labels[i][t] = q;
    }

    pub fn labels(&self) -> &[Vec<usize>] {
        &self.labels
    }

    /// Configuration z^t of all nodes at time `t`.
    pub fn column(&self, t: usize) -> Vec<usize> {
        self.labels.iter().map(|r| r[t]).collect()
    }

    pub fn max_label(&self) -> usize {
        self.labels.iter().flatten().copied().max().unwrap_or(0)
    }

    pub fn check_classes(&self, q: usize) -> Result<()> {
        if self.max_label() >= q {
            return Err(DsbmError::Domain(format!(
                "label {} out of range for Q = {q}",
                self.max_label()
            )));
        }
        Ok(())
    }
}

/// T symmetric binary adjacency matrices with zero diagonal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "EdgeList", into = "EdgeList")]
pub struct GraphSequence {
    n: usize,
    adjacency: Vec<Vec<u8>>,
    neighbors: Vec<Vec<Vec<usize>>>,
}

#[derive(Serialize, Deserialize)]
struct EdgeList {
    n: usize,
    #[serde(rename = "T")]
    t_steps: usize,
    edges: Vec<[usize; 3]>,
}

impl TryFrom<EdgeList> for GraphSequence {
    type Error = DsbmError;
    fn try_from(e: EdgeList) -> Result<Self> {
        GraphSequence::from_edges(e.n, e.t_steps, &e.edges)
    }
}

impl From<GraphSequence> for EdgeList {
    fn from(g: GraphSequence) -> Self {
        EdgeList {
            n: g.n,
            t_steps: g.t_steps(),
            edges: g.edges(),
        }
    }
}

impl GraphSequence {
    pub fn empty(n: usize, t_steps: usize) -> Self {
        Self::from_dense(n, vec![vec![0; n * n]; t_steps])
    }

    /// Builds from `[t, i, j]` triples; order of `i` and `j` is irrelevant.
    pub fn from_edges(n: usize, t_steps: usize, edges: &[[usize; 3]]) -> Result<Self> {
        if n == 0 || t_steps == 0 {
            return Err(DsbmError::Shape("graph sequence needs n, T >= 1".into()));
        }
        let mut adjacency = vec![vec![0u8; n * n]; t_steps];
        for &[t, i, j] in edges {
            if t >= t_steps || i >= n || j >= n {
                return Err(DsbmError::Shape(format!(
                    "edge [{t}, {i}, {j}] out of range"
                )));
            }
            if i == j {
                return Err(DsbmError::Shape(format!("self-loop at node {i}, time {t}")));
            }
            adjacency[t][i * n + j] = 1;
            adjacency[t][j * n + i] = 1;
        }
        Ok(Self::from_dense(n, adjacency))
    }

    fn from_dense(n: usize, adjacency: Vec<Vec<u8>>) -> Self {
        let neighbors = adjacency
            .iter()
            .map(|a| {
                (0..n)
                    .map(|i| (0..n).filter(|&j| a[i * n + j] == 1).collect())
                    .collect()
            })
            .collect();
        Self {
            n,
            adjacency,
            neighbors,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t_steps(&self) -> usize {
        self.adjacency.len()
    }

    #[inline]
    pub fn get(&self, t: usize, i: usize, j: usize) -> u8 {
        self.adjacency[t][i * self.n + j]
    }

    #[inline]
    pub fn edge(&self, t: usize, i: usize, j: usize) -> bool {
        self.get(t, i, j) == 1
    }

    pub fn neighbors(&self, t: usize, i: usize) -> &[usize] {
        &self.neighbors[t][i]
    }

    /// Upper-triangle edges as `[t, i, j]` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<[usize; 3]> {
        let mut out = Vec::new();
        for t in 0..self.t_steps() {
            for i in 0..self.n {
                for &j in &self.neighbors[t][i] {
                    if j > i {
                        out.push([t, i, j]);
                    }
                }
            }
        }
        out
    }

    pub fn edge_count(&self, t: usize) -> usize {
        self.neighbors[t].iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Time-averaged adjacency matrix.
    pub fn mean_adjacency(&self) -> Vec<Vec<f64>> {
        let n = self.n;
        let t_steps = self.t_steps() as f64;
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        self.adjacency
                            .iter()
                            .map(|a| a[i * n + j] as f64)
                            .sum::<f64>()
                            / t_steps
                    })
                    .collect()
            })
            .collect()
    }

    pub fn is_symmetric_hollow(&self) -> bool {
        let n = self.n;
        self.adjacency.iter().all(|a| {
            (0..n).all(|i| a[i * n + i] == 0 && (0..n).all(|j| a[i * n + j] == a[j * n + i]))
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Z_i^1 ~ α, then Markov transitions by Γ, independently across nodes.
pub fn sample_latent_paths(
    params: &ModelParams,
    n: usize,
    t_steps: usize,
    seed: u64,
) -> Result<LatentPaths> {
    if n == 0 || t_steps == 0 {
        return Err(DsbmError::Shape("n and T must be positive".into()));
    }
    let alpha = params.stationary_distribution()?.alpha;
    let labels = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = node_rng(seed, i);
            let mut path = Vec::with_capacity(t_steps);
            let mut cur = categorical(&alpha, rng.random::<f64>());
            path.push(cur);
            for _ in 1..t_steps {
                cur = categorical(&params.gamma[cur], rng.random::<f64>());
                path.push(cur);
            }
            path
        })
        .collect();
    Ok(LatentPaths { labels })
}

/// X^t_ij | z ~ Bernoulli(π^t_{z_i z_j}) independently over pairs and times.
pub fn sample_graphs(params: &ModelParams, z: &LatentPaths, seed: u64) -> Result<GraphSequence> {
    z.check_classes(params.q_classes)?;
    let n = z.n();
    let t_steps = z.t_steps();
    params.check_horizon(t_steps)?;
    let adjacency = (0..t_steps)
        .into_par_iter()
        .map(|t| {
            let pi = params.pi_at(t);
            let mut rng = graph_rng(seed, t);
            let mut a = vec![0u8; n * n];
            for i in 0..n {
                for j in (i + 1)..n {
                    let u: f64 = rng.random();
                    if u < pi[z.get(i, t)][z.get(j, t)] {
                        a[i * n + j] = 1;
                        a[j * n + i] = 1;
                    }
                }
            }
            a
        })
        .collect();
    Ok(GraphSequence::from_dense(n, adjacency))
}

/// Latent paths and graphs from one seed (disjoint streams).
pub fn sample_dataset(
    params: &ModelParams,
    n: usize,
    t_steps: usize,
    seed: u64,
) -> Result<(LatentPaths, GraphSequence)> {
    let z = sample_latent_paths(params, n, t_steps, seed)?;
    let x = sample_graphs(params, &z, seed)?;
    Ok((z, x))
}

/// Occupancies `n_q[t][q]` and transition counts `n_ql[q][l]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CountSummary {
    pub n_q: Vec<Vec<usize>>,
    pub n_ql: Vec<Vec<usize>>,
}

pub fn count_summary(z: &LatentPaths, q: usize) -> Result<CountSummary> {
    z.check_classes(q)?;
    let t_steps = z.t_steps();
    let mut n_q = vec![vec![0; q]; t_steps];
    let mut n_ql = vec![vec![0; q]; q];
    for path in z.labels() {
        for t in 0..t_steps {
            n_q[t][path[t]] += 1;
            if t + 1 < t_steps {
                n_ql[path[t]][path[t + 1]] += 1;
            }
        }
    }
    Ok(CountSummary { n_q, n_ql })
}

/// `c[q][q']` = number of nodes with label q in `z_a` and q' in `z_b`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub c: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    /// Row-normalised proportions a_qq' = C_qq' / N_q; empty rows stay zero.
    pub fn proportions(&self) -> Vec<Vec<f64>> {
        self.c
            .iter()
            .map(|row| {
                let s: usize = row.iter().sum();
                row.iter()
                    .map(|&v| if s == 0 { 0.0 } else { v as f64 / s as f64 })
                    .collect()
            })
            .collect()
    }
}

pub fn confusion_matrix(z_a: &[usize], z_b: &[usize], q: usize) -> Result<ConfusionMatrix> {
    if z_a.len() != z_b.len() {
        return Err(DsbmError::Shape("labelings differ in length".into()));
    }
    let mut c = vec![vec![0; q]; q];
    for (&a, &b) in z_a.iter().zip(z_b) {
        if a >= q || b >= q {
            return Err(DsbmError::Domain(format!("label out of range for Q = {q}")));
        }
        c[a][b] += 1;
    }
    Ok(ConfusionMatrix { c })
}

/// Whether N_q(z^t)/n ≥ α_q − η for every t and q.
pub fn omega_eta_member(z: &LatentPaths, alpha: &StationaryDist, eta: f64) -> Result<bool> {
    if eta <= 0.0 {
        return Err(DsbmError::Domain(format!("eta = {eta} must be positive")));
    }
    let q = alpha.alpha.len();
    let counts = count_summary(z, q)?;
    let n = z.n() as f64;
    Ok(counts.n_q.iter().all(|row| {
        row.iter()
            .zip(&alpha.alpha)
            .all(|(&c, &a)| c as f64 / n >= a - eta)
    }))
}
