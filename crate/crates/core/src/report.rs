use serde::{Deserialize, Serialize};

use crate::params::{Alignment, ModelParams};
use crate::vem::VariationalState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub index: usize,
    /// Final objective, or `None` when the restart was abandoned.
    pub objective: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub status: String,
}

/// Unconstrained-in-Γ likelihood maximiser kept alongside the fixed-point
/// companion reported as the estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgmaxSummary {
    pub params: ModelParams,
    pub loglik: f64,
    pub gamma_residual: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub estimator: String,
    pub params: ModelParams,
    /// ELBO for VEM, log-likelihood for the exact MLE.
    pub objective: f64,
    pub trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Objective after each fixed-point polishing step.
    pub polish_trace: Vec<f64>,
    /// γ − FP(γ) on the reported parameters; absent when T = 1.
    pub gamma_residual: Option<Vec<Vec<f64>>>,
    pub max_abs_residual: Option<f64>,
    /// Number of M-steps whose raw Γ or π left the admissible box.
    pub projection_events: usize,
    /// Some reported entry lies within 1e-4 of the admissible box.
    pub boundary: bool,
    pub restarts: Vec<RestartSummary>,
    pub best_restart: usize,
    pub alignment: Option<Alignment>,
    pub argmax: Option<ArgmaxSummary>,
    pub wall_ms: u64,
    #[serde(skip)]
    pub state: Option<VariationalState>,
}

impl EstimationReport {
    pub fn to_json(&self) -> crate::Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub(crate) const BOUNDARY_TOL: f64 = 1e-4;

/// Whether any γ or π entry is within [`BOUNDARY_TOL`] of its box.
pub(crate) fn near_boundary(params: &ModelParams) -> bool {
    let (d, z) = (params.delta, params.zeta);
    let g = params
        .gamma
        .iter()
        .flatten()
        .any(|&v| v - d < BOUNDARY_TOL || 1.0 - d - v < BOUNDARY_TOL);
    let p = params
        .pi
        .slices()
        .iter()
        .flat_map(|s| s.iter().flatten())
        .any(|&v| v - z < BOUNDARY_TOL || 1.0 - z - v < BOUNDARY_TOL);
    (params.q_classes > 1 && g) || p
}

pub(crate) fn max_abs(m: &[Vec<f64>]) -> f64 {
    m.iter().flatten().fold(0.0, |a, &v| a.max(v.abs()))
}
