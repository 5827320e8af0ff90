//! Parameter containers for the dynamic SBM, validity checks against the
//! admissible parameter sets, stationary distributions and label-permutation
//! algebra.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DsbmError, Result};

pub const DEFAULT_DELTA: f64 = 0.05;
pub const DEFAULT_ZETA: f64 = 0.05;
/// Largest class count for exhaustive permutation search (8! = 40320).
pub const MAX_PERMUTATION_Q: usize = 8;

const ROW_SUM_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-12;
const STATIONARY_TOL: f64 = 1e-10;

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

fn default_zeta() -> f64 {
    DEFAULT_ZETA
}

/// Connectivity probabilities: one symmetric matrix shared by all time steps,
/// or one matrix per time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Connectivity {
    Stationary(Vec<Vec<f64>>),
    TimeVarying(Vec<Vec<Vec<f64>>>),
}

impl Connectivity {
    /// Matrix in force at time `t` (0-based).
    pub fn at(&self, t: usize) -> &[Vec<f64>] {
        match self {
            Connectivity::Stationary(p) => p,
            Connectivity::TimeVarying(ps) => &ps[t],
        }
    }

    pub fn is_time_varying(&self) -> bool {
        matches!(self, Connectivity::TimeVarying(_))
    }

    /// Number of distinct slices (1 for the stationary model).
    pub fn n_slices(&self) -> usize {
        match self {
            Connectivity::Stationary(_) => 1,
            Connectivity::TimeVarying(ps) => ps.len(),
        }
    }

    pub fn slices(&self) -> Vec<&[Vec<f64>]> {
        match self {
            Connectivity::Stationary(p) => vec![p.as_slice()],
            Connectivity::TimeVarying(ps) => ps.iter().map(|p| p.as_slice()).collect(),
        }
    }

    pub fn map_slices(&self, mut f: impl FnMut(&[Vec<f64>]) -> Vec<Vec<f64>>) -> Connectivity {
        match self {
            Connectivity::Stationary(p) => Connectivity::Stationary(f(p)),
            Connectivity::TimeVarying(ps) => {
                Connectivity::TimeVarying(ps.iter().map(|p| f(p)).collect())
            }
        }
    }
}

/// The model parameter θ = (Γ, π) together with the margins δ and ζ that
/// define the admissible set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    #[serde(rename = "Q")]
    pub q_classes: usize,
    pub gamma: Vec<Vec<f64>>,
    pub pi: Connectivity,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_zeta")]
    pub zeta: f64,
}

impl ModelParams {
    pub fn new(
        q_classes: usize,
        gamma: Vec<Vec<f64>>,
        pi: Connectivity,
        delta: f64,
        zeta: f64,
    ) -> Result<Self> {
        let p = Self {
            q_classes,
            gamma,
            pi,
            delta,
            zeta,
        };
        p.check_shapes()?;
        Ok(p)
    }

    /// Stationary-π model with default margins.
    pub fn stationary(gamma: Vec<Vec<f64>>, pi: Vec<Vec<f64>>) -> Result<Self> {
        let q = gamma.len();
        Self::new(
            q,
            gamma,
            Connectivity::Stationary(pi),
            DEFAULT_DELTA,
            DEFAULT_ZETA,
        )
    }

    pub fn with_margins(mut self, delta: f64, zeta: f64) -> Self {
        self.delta = delta;
        self.zeta = zeta;
        self
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: ModelParams = serde_json::from_str(s)?;
        p.check_shapes()?;
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn pi_at(&self, t: usize) -> &[Vec<f64>] {
        self.pi.at(t)
    }

    /// Structural checks: square Q×Q matrices, Q ≥ 1.
    pub fn check_shapes(&self) -> Result<()> {
        let q = self.q_classes;
        if q == 0 {
            return Err(DsbmError::Shape("Q must be positive".into()));
        }
        check_square(&self.gamma, q, "gamma")?;
        match &self.pi {
            Connectivity::Stationary(p) => check_square(p, q, "pi")?,
            Connectivity::TimeVarying(ps) => {
                if ps.is_empty() {
                    return Err(DsbmError::Shape("time-varying pi has no slices".into()));
                }
                for p in ps {
                    check_square(p, q, "pi[t]")?;
                }
            }
        }
        Ok(())
    }

    /// Shape compatibility with a graph sequence of length `t_steps`.
    pub fn check_horizon(&self, t_steps: usize) -> Result<()> {
        if let Connectivity::TimeVarying(ps) = &self.pi {
            if ps.len() != t_steps {
                return Err(DsbmError::Shape(format!(
                    "pi has {} slices but the data has {} time steps",
                    ps.len(),
                    t_steps
                )));
            }
        }
        Ok(())
    }

    pub fn stationary_distribution(&self) -> Result<StationaryDist> {
        stationary_distribution(&self.gamma)
    }

    pub fn validate(&self) -> Result<ValidityReport> {
        validate_theta(self)
    }
}

fn check_square(m: &[Vec<f64>], q: usize, name: &str) -> Result<()> {
    if m.len() != q || m.iter().any(|r| r.len() != q) {
        return Err(DsbmError::Shape(format!("{name} must be {q}x{q}")));
    }
    Ok(())
}

/// First index at which an assumption fails. Indices are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub t: Option<usize>,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Check {
    Pass,
    Fail(Violation),
}

impl Check {
    pub fn passed(&self) -> bool {
        matches!(self, Check::Pass)
    }
}

/// Pass/fail per assumption. `constant_distinct_diagonal` is only evaluated
/// for time-varying connectivity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidityReport {
    /// δ ∈ (0, 1/Q) and ζ ∈ (0, 1/2).
    pub margins: Check,
    pub row_stochastic: Check,
    pub symmetry: Check,
    /// Distinct rows of π (per slice in the time-varying model).
    pub identifiability: Check,
    /// γ_ql ∈ [δ, 1-δ].
    pub gamma_bounds: Check,
    /// π_ql ∈ [ζ, 1-ζ].
    pub pi_bounds: Check,
    pub constant_distinct_diagonal: Option<Check>,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.margins.passed()
            && self.row_stochastic.passed()
            && self.symmetry.passed()
            && self.identifiability.passed()
            && self.gamma_bounds.passed()
            && self.pi_bounds.passed()
            && self
                .constant_distinct_diagonal
                .as_ref()
                .is_none_or(Check::passed)
    }
}

pub fn validate_theta(params: &ModelParams) -> Result<ValidityReport> {
    params.check_shapes()?;
    let q = params.q_classes;
    let (delta, zeta) = (params.delta, params.zeta);

    let margins = if !(delta > 0.0 && delta < 1.0 / q as f64) {
        Check::Fail(Violation {
            t: None,
            row: 0,
            col: 0,
            value: delta,
        })
    } else if !(zeta > 0.0 && zeta < 0.5) {
        Check::Fail(Violation {
            t: None,
            row: 0,
            col: 1,
            value: zeta,
        })
    } else {
        Check::Pass
    };

    let mut row_stochastic = Check::Pass;
    for (r, row) in params.gamma.iter().enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOL || row.iter().any(|&g| g < 0.0) {
            row_stochastic = Check::Fail(Violation {
                t: None,
                row: r,
                col: 0,
                value: s,
            });
            break;
        }
    }

    // with one class Γ = [1] is forced and the box is empty
    let gamma_bounds = if q == 1 {
        Check::Pass
    } else {
        first_outside(&params.gamma, delta, 1.0 - delta, None)
    };

    let slices = params.pi.slices();
    let tagged = |i: usize| params.pi.is_time_varying().then_some(i);

    let mut symmetry = Check::Pass;
    'sym: for (t, p) in slices.iter().enumerate() {
        for a in 0..q {
            for b in (a + 1)..q {
                if (p[a][b] - p[b][a]).abs() > SYMMETRY_TOL {
                    symmetry = Check::Fail(Violation {
                        t: tagged(t),
                        row: a,
                        col: b,
                        value: p[a][b] - p[b][a],
                    });
                    break 'sym;
                }
            }
        }
    }

    let mut pi_bounds = Check::Pass;
    for (t, p) in slices.iter().enumerate() {
        let c = first_outside(p, zeta, 1.0 - zeta, tagged(t));
        if !c.passed() {
            pi_bounds = c;
            break;
        }
    }

    let mut identifiability = Check::Pass;
    'id: for (t, p) in slices.iter().enumerate() {
        for a in 0..q {
            for b in (a + 1)..q {
                if (0..q).all(|l| p[a][l] == p[b][l]) {
                    identifiability = Check::Fail(Violation {
                        t: tagged(t),
                        row: a,
                        col: b,
                        value: 0.0,
                    });
                    break 'id;
                }
            }
        }
    }

    let constant_distinct_diagonal = match &params.pi {
        Connectivity::Stationary(_) => None,
        Connectivity::TimeVarying(ps) => Some(check_diagonal(ps, q)),
    };

    Ok(ValidityReport {
        margins,
        row_stochastic,
        symmetry,
        identifiability,
        gamma_bounds,
        pi_bounds,
        constant_distinct_diagonal,
    })
}

fn first_outside(m: &[Vec<f64>], lo: f64, hi: f64, t: Option<usize>) -> Check {
    for (r, row) in m.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if !(lo..=hi).contains(&v) {
                return Check::Fail(Violation {
                    t,
                    row: r,
                    col: c,
                    value: v,
                });
            }
        }
    }
    Check::Pass
}

fn check_diagonal(ps: &[Vec<Vec<f64>>], q: usize) -> Check {
    for (t, p) in ps.iter().enumerate().skip(1) {
        for k in 0..q {
            if p[k][k] != ps[0][k][k] {
                return Check::Fail(Violation {
                    t: Some(t),
                    row: k,
                    col: k,
                    value: p[k][k],
                });
            }
        }
    }
    for a in 0..q {
        for b in (a + 1)..q {
            if ps[0][a][a] == ps[0][b][b] {
                return Check::Fail(Violation {
                    t: Some(0),
                    row: a,
                    col: b,
                    value: ps[0][a][a],
                });
            }
        }
    }
    Check::Pass
}

/// Stationary law α of a row-stochastic matrix: αΓ = α, Σα = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryDist {
    pub alpha: Vec<f64>,
}

/// Solves (Γᵀ − I)α = 0 with the last equation replaced by Σα = 1.
pub fn stationary_distribution(gamma: &[Vec<f64>]) -> Result<StationaryDist> {
    let q = gamma.len();
    check_square(gamma, q, "gamma")?;
    if q == 1 {
        return Ok(StationaryDist { alpha: vec![1.0] });
    }
    let mut a = DMatrix::<f64>::zeros(q, q);
    for r in 0..q {
        for c in 0..q {
            a[(r, c)] = gamma[c][r] - if r == c { 1.0 } else { 0.0 };
        }
    }
    for c in 0..q {
        a[(q - 1, c)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(q);
    b[q - 1] = 1.0;
    let alpha = a
        .lu()
        .solve(&b)
        .ok_or_else(|| DsbmError::Numerical("singular stationary system".into()))?;
    let alpha: Vec<f64> = alpha.iter().copied().collect();
    let resid = (0..q)
        .map(|l| ((0..q).map(|k| alpha[k] * gamma[k][l]).sum::<f64>() - alpha[l]).abs())
        .fold(0.0, f64::max);
    if !resid.is_finite() || resid > STATIONARY_TOL || alpha.iter().any(|&a| a < -1e-12) {
        return Err(DsbmError::Numerical(format!(
            "stationary solve is ill-conditioned (residual {resid:.3e})"
        )));
    }
    Ok(StationaryDist { alpha })
}

/// A bijection on the class labels `0..Q`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelPermutation {
    mapping: Vec<usize>,
}

impl LabelPermutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let q = mapping.len();
        let mut seen = vec![false; q];
        for &m in &mapping {
            if m >= q || seen[m] {
                return Err(DsbmError::Domain(format!("{mapping:?} is not a bijection")));
            }
            seen[m] = true;
        }
        Ok(Self { mapping })
    }

    pub fn identity(q: usize) -> Self {
        Self {
            mapping: (0..q).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    #[inline]
    pub fn apply(&self, q: usize) -> usize {
        self.mapping[q]
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.mapping.len()];
        for (q, &m) in self.mapping.iter().enumerate() {
            inv[m] = q;
        }
        Self { mapping: inv }
    }

    /// All permutations of `0..q` in lexicographic order, identity first.
    pub fn all(q: usize) -> impl Iterator<Item = LabelPermutation> {
        (0..q)
            .permutations(q)
            .map(|mapping| LabelPermutation { mapping })
    }

    /// `m_σ[q][l] = m[σ(q)][σ(l)]`.
    pub fn permute_matrix(&self, m: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let q = self.mapping.len();
        (0..q)
            .map(|a| (0..q).map(|b| m[self.apply(a)][self.apply(b)]).collect())
            .collect()
    }
}

/// θ_σ: every matrix re-indexed by σ, each π slice identically.
pub fn permute_params(params: &ModelParams, sigma: &LabelPermutation) -> Result<ModelParams> {
    if sigma.len() != params.q_classes {
        return Err(DsbmError::Shape(format!(
            "permutation of size {} for Q = {}",
            sigma.len(),
            params.q_classes
        )));
    }
    Ok(ModelParams {
        q_classes: params.q_classes,
        gamma: sigma.permute_matrix(&params.gamma),
        pi: params.pi.map_slices(|p| sigma.permute_matrix(p)),
        delta: params.delta,
        zeta: params.zeta,
    })
}

/// Sup-norm distance between `truth` and `estimate` relabelled by σ,
/// maximised over time slices.
pub fn pi_distance(estimate: &Connectivity, truth: &Connectivity, sigma: &LabelPermutation) -> f64 {
    let est = estimate.slices();
    let tru = truth.slices();
    est.iter()
        .zip(&tru)
        .map(|(e, t)| {
            let q = t.len();
            let mut d: f64 = 0.0;
            for a in 0..q {
                for b in 0..q {
                    d = d.max((t[a][b] - e[sigma.apply(a)][sigma.apply(b)]).abs());
                }
            }
            d
        })
        .fold(0.0, f64::max)
}

pub fn gamma_distance(estimate: &[Vec<f64>], truth: &[Vec<f64>], sigma: &LabelPermutation) -> f64 {
    let permuted = sigma.permute_matrix(estimate);
    crate::numeric::max_abs_diff(&permuted, truth)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub permutation: LabelPermutation,
    pub pi_error: f64,
}

/// Label alignment minimising ‖π* − π̂_σ‖_∞ by exhaustive search over all Q!
/// permutations. One σ is shared by all time slices. Ties keep the
/// lexicographically first permutation.
pub fn align_by_pi(estimate: &ModelParams, truth: &ModelParams) -> Result<Alignment> {
    let q = truth.q_classes;
    if estimate.q_classes != q {
        return Err(DsbmError::Shape("estimate and truth differ in Q".into()));
    }
    if q > MAX_PERMUTATION_Q {
        return Err(DsbmError::UnsupportedSize {
            what: "Q for permutation search",
            size: q as f64,
            cap: MAX_PERMUTATION_Q as f64,
        });
    }
    if estimate.pi.n_slices() != truth.pi.n_slices()
        || estimate.pi.is_time_varying() != truth.pi.is_time_varying()
    {
        return Err(DsbmError::Shape("connectivity layouts differ".into()));
    }
    let mut best: Option<Alignment> = None;
    for sigma in LabelPermutation::all(q) {
        let d = pi_distance(&estimate.pi, &truth.pi, &sigma);
        if best.as_ref().is_none_or(|b| d < b.pi_error) {
            best = Some(Alignment {
                permutation: sigma,
                pi_error: d,
            });
        }
    }
    Ok(best.expect("at least one permutation"))
}

/// Bernoulli Kullback–Leibler divergence KL(B(p1) ‖ B(p2)).
pub fn bernoulli_kl(p1: f64, p2: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p1) {
        return Err(DsbmError::Domain(format!("p1 = {p1} outside [0, 1]")));
    }
    if !(p2 > 0.0 && p2 < 1.0) {
        return Err(DsbmError::Domain(format!("p2 = {p2} outside (0, 1)")));
    }
    let a = if p1 > 0.0 { p1 * (p1 / p2).ln() } else { 0.0 };
    let b = if p1 < 1.0 {
        (1.0 - p1) * ((1.0 - p1) / (1.0 - p2)).ln()
    } else {
        0.0
    };
    Ok((a + b).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn interior() -> ModelParams {
        ModelParams::stationary(
            vec![vec![0.7, 0.3], vec![0.3, 0.7]],
            vec![vec![0.8, 0.2], vec![0.2, 0.6]],
        )
        .unwrap()
        .with_margins(0.1, 0.1)
    }

    #[test]
    fn interior_point_passes() {
        let r = interior().validate().unwrap();
        assert!(r.is_valid(), "{r:?}");
    }

    #[test]
    fn gamma_on_boundary_fails_at_first_index() {
        let mut p = interior();
        p.gamma = vec![vec![1.0, 0.0], vec![0.3, 0.7]];
        let r = p.validate().unwrap();
        assert!(r.row_stochastic.passed());
        match r.gamma_bounds {
            Check::Fail(v) => assert_eq!((v.row, v.col), (0, 0)),
            Check::Pass => panic!("expected failure"),
        }
    }

    /// Scans every q ≠ q' and l for a differing entry.
    fn identifiable_oracle(p: &[Vec<f64>]) -> bool {
        let q = p.len();
        (0..q).all(|a| (0..q).all(|b| a == b || (0..q).any(|l| p[a][l] != p[b][l])))
    }

    #[test]
    fn swapped_rows_are_still_identifiable() {
        let pi = vec![vec![0.5, 0.3], vec![0.3, 0.5]];
        let expected = identifiable_oracle(&pi);
        assert!(expected);
        let mut p = interior();
        p.pi = Connectivity::Stationary(pi);
        assert_eq!(p.validate().unwrap().identifiability.passed(), expected);

        p.pi = Connectivity::Stationary(vec![vec![0.4, 0.4], vec![0.4, 0.4]]);
        assert!(!identifiable_oracle(p.pi_at(0)));
        assert!(!p.validate().unwrap().identifiability.passed());
    }

    #[test]
    fn shape_error_is_structural() {
        let p = ModelParams {
            q_classes: 2,
            gamma: vec![vec![1.0]],
            pi: Connectivity::Stationary(vec![vec![0.5; 2]; 2]),
            delta: 0.1,
            zeta: 0.1,
        };
        assert!(matches!(p.validate(), Err(DsbmError::Shape(_))));
    }

    #[test]
    fn time_varying_diagonal_rules() {
        let mut p = interior();
        p.pi = Connectivity::TimeVarying(vec![
            vec![vec![0.8, 0.2], vec![0.2, 0.4]],
            vec![vec![0.8, 0.3], vec![0.3, 0.4]],
        ]);
        let r = p.validate().unwrap();
        assert!(r.is_valid(), "{r:?}");
        p.pi = Connectivity::TimeVarying(vec![
            vec![vec![0.8, 0.2], vec![0.2, 0.4]],
            vec![vec![0.7, 0.3], vec![0.3, 0.4]],
        ]);
        assert!(!p
            .validate()
            .unwrap()
            .constant_distinct_diagonal
            .unwrap()
            .passed());
        p.pi = Connectivity::TimeVarying(vec![vec![vec![0.4, 0.2], vec![0.2, 0.4]]]);
        assert!(!p
            .validate()
            .unwrap()
            .constant_distinct_diagonal
            .unwrap()
            .passed());
    }

    #[test]
    fn json_round_trip_both_layouts() {
        let p = interior();
        let back = ModelParams::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(p, back);
        let s = r#"{"zeta":0.1,"delta":0.1,"Q":2,"gamma":[[0.6,0.4],[0.4,0.6]],
                   "pi":[[[0.8,0.2],[0.2,0.4]],[[0.8,0.3],[0.3,0.4]]]}"#;
        let tv = ModelParams::from_json(s).unwrap();
        assert!(tv.pi.is_time_varying());
        assert_eq!(tv.pi_at(1)[0][1], 0.3);
        assert!(ModelParams::from_json(r#"{"Q":3,"gamma":[[1.0]],"pi":[[0.5]]}"#).is_err());
    }

    #[test]
    fn stationary_examples() {
        let a = stationary_distribution(&[vec![0.7, 0.3], vec![0.3, 0.7]]).unwrap();
        assert!((a.alpha[0] - 0.5).abs() < 1e-14);
        // hand solution: 0.1 a0 = 0.3 a1, a0 + a1 = 1
        let a = stationary_distribution(&[vec![0.9, 0.1], vec![0.3, 0.7]]).unwrap();
        assert!((a.alpha[0] - 0.75).abs() < 1e-14 && (a.alpha[1] - 0.25).abs() < 1e-14);
    }

    #[test]
    fn reducible_chain_is_numerical_error() {
        let r = stationary_distribution(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(matches!(r, Err(DsbmError::Numerical(_))));
    }

    #[test]
    fn swap_on_two_classes() {
        let p = ModelParams::stationary(
            vec![vec![0.7, 0.3], vec![0.4, 0.6]],
            vec![vec![0.9, 0.2], vec![0.2, 0.4]],
        )
        .unwrap();
        let swap = LabelPermutation::new(vec![1, 0]).unwrap();
        let s = permute_params(&p, &swap).unwrap();
        assert_eq!(s.pi_at(0), &[vec![0.4, 0.2], vec![0.2, 0.9]]);
        assert_eq!(s.gamma, vec![vec![0.6, 0.4], vec![0.3, 0.7]]);
        assert_eq!(permute_params(&s, &swap).unwrap(), p);
        assert_eq!(
            permute_params(&p, &LabelPermutation::identity(2)).unwrap(),
            p
        );
    }

    #[test]
    fn bad_permutations_rejected() {
        assert!(LabelPermutation::new(vec![0, 0]).is_err());
        assert!(LabelPermutation::new(vec![0, 2]).is_err());
    }

    #[test]
    fn alignment_perturbation() {
        let truth = interior();
        let mut est = truth.clone();
        if let Connectivity::Stationary(p) = &mut est.pi {
            p[1][1] += 0.01;
        }
        let a = align_by_pi(&est, &truth).unwrap();
        assert_eq!(a.permutation, LabelPermutation::identity(2));
        assert!((a.pi_error - 0.01).abs() < 1e-12);
    }

    #[test]
    fn alignment_rejects_large_q() {
        let q = 9;
        let p = ModelParams {
            q_classes: q,
            gamma: vec![vec![1.0 / q as f64; q]; q],
            pi: Connectivity::Stationary(vec![vec![0.5; q]; q]),
            delta: 0.01,
            zeta: 0.1,
        };
        assert!(matches!(
            align_by_pi(&p, &p),
            Err(DsbmError::UnsupportedSize { .. })
        ));
    }

    #[test]
    fn kl_examples() {
        assert_eq!(bernoulli_kl(0.3, 0.3).unwrap(), 0.0);
        let expected = 0.5 * (4.0f64 / 3.0).ln();
        assert!((bernoulli_kl(0.5, 0.25).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.14384).abs() < 1e-5);
        assert!((bernoulli_kl(0.0, 0.5).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(bernoulli_kl(0.5, 0.0).is_err());
        assert!(bernoulli_kl(0.5, 1.0).is_err());
        assert!(bernoulli_kl(1.5, 0.5).is_err());
    }

    #[test]
    fn kl_pinsker_grid() {
        let grid: Vec<f64> = (0..=90).map(|k| 0.05 + 0.01 * k as f64).collect();
        for &a in &grid {
            for &b in &grid {
                let kl = bernoulli_kl(a, b).unwrap();
                assert!(kl >= 2.0 * (a - b).powi(2) - 1e-15, "({a}, {b})");
            }
        }
    }

    fn random_gamma(q: usize, delta: f64) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(0.0f64..1.0, q), q).prop_map(move |raw| {
            raw.into_iter()
                .map(|row| {
                    let s: f64 = row.iter().sum::<f64>() + 1e-9;
                    let w: Vec<f64> = row.iter().map(|x| (x + 1e-9) / s).collect();
                    crate::numeric::project_capped_simplex(&w, delta, 1.0 - delta)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn stationary_fixed_point(
            gamma in (2usize..=6).prop_flat_map(|q| random_gamma(q, 0.5 / q as f64)),
        ) {
            let q = gamma.len();
            let delta = 0.5 / q as f64;
            let a = stationary_distribution(&gamma).unwrap();
            prop_assert!((a.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            for l in 0..q {
                let s: f64 = (0..q).map(|k| a.alpha[k] * gamma[k][l]).sum();
                prop_assert!((s - a.alpha[l]).abs() < 1e-10);
                prop_assert!(a.alpha[l] >= delta - 1e-12 && a.alpha[l] <= 1.0 - delta + 1e-12);
            }
        }

        #[test]
        fn alignment_recovers_every_permutation(
            vals in prop::collection::vec(0.05f64..0.95, 6),
            perm_idx in 0usize..6,
        ) {
            let pi = vec![
                vec![vals[0], vals[1], vals[2]],
                vec![vals[1], vals[3], vals[4]],
                vec![vals[2], vals[4], vals[5]],
            ];
            let truth = ModelParams::stationary(vec![vec![1.0 / 3.0; 3]; 3], pi).unwrap();
            let sigma = LabelPermutation::all(3).nth(perm_idx).unwrap();
            let est = permute_params(&truth, &sigma).unwrap();
            let a = align_by_pi(&est, &truth).unwrap();
            prop_assert_eq!(a.pi_error, 0.0);
            let back = permute_params(&est, &a.permutation).unwrap();
            prop_assert_eq!(back.pi, truth.pi);
        }

        #[test]
        fn alignment_matches_brute_force(
            a in prop::collection::vec(0.05f64..0.95, 6),
            b in prop::collection::vec(0.05f64..0.95, 6),
        ) {
            let sym = |v: &[f64]| vec![
                vec![v[0], v[1], v[2]], vec![v[1], v[3], v[4]], vec![v[2], v[4], v[5]],
            ];
            let g = vec![vec![1.0 / 3.0; 3]; 3];
            let truth = ModelParams::stationary(g.clone(), sym(&a)).unwrap();
            let est = ModelParams::stationary(g, sym(&b)).unwrap();
            // independent brute force over the six permutations of {0,1,2}
            let perms = [[0,1,2],[0,2,1],[1,0,2],[1,2,0],[2,0,1],[2,1,0]];
            let tp = truth.pi_at(0);
            let ep = est.pi_at(0);
            let brute = perms.iter().map(|s| {
                let mut d: f64 = 0.0;
                for q in 0..3 { for l in 0..3 {
                    d = d.max((tp[q][l] - ep[s[q]][s[l]]).abs());
                }}
                d
            }).fold(f64::INFINITY, f64::min);
            prop_assert_eq!(align_by_pi(&est, &truth).unwrap().pi_error, brute);
        }

        #[test]
        fn validity_matches_inequalities(
            g in 0.0f64..1.0, p0 in 0.0f64..1.0, p1 in 0.0f64..1.0, p2 in 0.0f64..1.0,
        ) {
            let delta = 0.1;
            let zeta = 0.1;
            let snap = |x: f64, lo: f64| if (x - lo).abs() < 0.02 { lo } else { x };
            let g = snap(g, delta);
            let gamma = vec![vec![g, 1.0 - g], vec![1.0 - g, g]];
            let pi = vec![vec![snap(p0, zeta), p1], vec![p1, snap(p2, 1.0 - zeta)]];
            let p = ModelParams::stationary(gamma.clone(), pi.clone()).unwrap().with_margins(delta, zeta);
            let inside = |x: f64, m: f64| x >= m && x <= 1.0 - m;
            let expected = gamma.iter().flatten().all(|&x| inside(x, delta))
                && pi.iter().flatten().all(|&x| inside(x, zeta))
                && (pi[0][0] != pi[1][0] || pi[0][1] != pi[1][1])
                && ((gamma[0].iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert_eq!(p.validate().unwrap().is_valid(), expected);
        }
    }
}
