//! Dynamic stochastic block models: simulation, exact likelihood oracles,
//! variational EM and numerical checks of the model's concentration and
//! combinatorial bounds.

pub mod error;
pub mod exact;
pub mod experiment;
pub mod numeric;
pub mod params;
pub mod report;
pub mod sampler;
pub mod theory;
pub mod vem;

#[cfg(test)]
mod testutil;

pub use error::{DsbmError, Result};
pub use exact::{
    exact_loglik_bruteforce, exact_loglik_transfer, exact_mle, exact_posterior_marginals, limit_m,
    limit_m_sup, LimitSup, LogLikValue, MleConfig, PosteriorMarginals,
};
pub use experiment::{
    emit_outputs, rate_regression, run_consistency_experiment, Estimator, ExperimentConfig,
    ExperimentResult, RateTarget,
};
pub use params::{
    align_by_pi, bernoulli_kl, permute_params, stationary_distribution, validate_theta, Alignment,
    Check, Connectivity, LabelPermutation, ModelParams, StationaryDist, ValidityReport, Violation,
};
pub use report::{EstimationReport, RestartSummary};
pub use sampler::{
    confusion_matrix, count_summary, omega_eta_member, sample_dataset, sample_graphs,
    sample_latent_paths, ConfusionMatrix, CountSummary, GraphSequence, LatentPaths,
};
pub use theory::{
    concentration_report, discrepancy_set_size, discrepancy_suite, hamming, ConcentrationReport,
    DiscrepancyReport,
};
pub use vem::{
    e_step, elbo, fit_vem, init_tau, m_step_gamma, m_step_pi, EStepConfig, InitStrategy,
    VariationalState, VemConfig,
};
