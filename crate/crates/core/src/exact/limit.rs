//! The limiting normalised likelihood 𝕄(π, A) and its supremum over
//! row-stochastic A.

use serde::Serialize;

use crate::error::{DsbmError, Result};

/// Largest Q for the vertex enumeration in [`limit_m_sup`] (Q^Q starts).
pub const MAX_LIMIT_Q: usize = 5;

const STOCHASTIC_TOL: f64 = 1e-9;
const N_STARTS: usize = 5;
const IMPROVE_TOL: f64 = 1e-12;
const MAX_PASSES: usize = 10_000;

/// Cross-entropy weights B[q][l][q'][l'] scaled by α*_q α*_l.
struct Objective {
    q: usize,
    w: Vec<f64>,
}

impl Objective {
    fn new(pi_true: &[Vec<f64>], alpha_true: &[f64], pi: &[Vec<f64>]) -> Result<Self> {
        let q = pi_true.len();
        let square = |m: &[Vec<f64>]| m.len() == q && m.iter().all(|r| r.len() == q);
        if q == 0 || !square(pi_true) || !square(pi) || alpha_true.len() != q {
            return Err(DsbmError::Shape(
                "limit_m expects matching Q x Q inputs".into(),
            ));
        }
        if pi.iter().flatten().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(DsbmError::Domain("pi must lie in (0, 1)".into()));
        }
        let mut w = vec![0.0; q * q * q * q];
        for a in 0..q {
            for b in 0..q {
                let s = pi_true[a][b];
                let wab = alpha_true[a] * alpha_true[b];
                for c in 0..q {
                    for d in 0..q {
                        w[((a * q + b) * q + c) * q + d] =
                            wab * (s * pi[c][d].ln() + (1.0 - s) * (-pi[c][d]).ln_1p());
                    }
                }
            }
        }
        Ok(Self { q, w })
    }

    fn eval(&self, a: &[Vec<f64>]) -> f64 {
        let q = self.q;
        let mut s = 0.0;
        for qa in 0..q {
            for qb in 0..q {
                let base = (qa * q + qb) * q * q;
                for c in 0..q {
                    let ac = a[qa][c];
                    if ac == 0.0 {
                        continue;
                    }
                    for d in 0..q {
                        s += ac * a[qb][d] * self.w[base + c * q + d];
                    }
                }
            }
        }
        s
    }
}

/// 𝕄(π, A) = Σ α*_q α*_l Σ a_qq' a_ll' [π*_ql log π_q'l' + (1 − π*_ql) log(1 − π_q'l')].
pub fn limit_m(
    pi_true: &[Vec<f64>],
    alpha_true: &[f64],
    pi: &[Vec<f64>],
    a: &[Vec<f64>],
) -> Result<f64> {
    let obj = Objective::new(pi_true, alpha_true, pi)?;
    if a.len() != obj.q || a.iter().any(|r| r.len() != obj.q) {
        return Err(DsbmError::Shape("A must be Q x Q".into()));
    }
    for row in a {
        let s: f64 = row.iter().sum();
        if row.iter().any(|&v| v < 0.0) || (s - 1.0).abs() > STOCHASTIC_TOL {
            return Err(DsbmError::Domain("A must be row-stochastic".into()));
        }
    }
    Ok(obj.eval(a))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitSup {
    pub value: f64,
    pub a_star: Vec<Vec<f64>>,
}

/// sup_A 𝕄(π, A) over row-stochastic A.
///
/// All Q^Q 0/1 row matrices are scored; the best few seed a coordinate
/// ascent that moves mass between two entries of one row at a time. The
/// objective restricted to such a move is a quadratic in the moved mass
/// (a row meets itself in the q = l terms), so each move is solved exactly.
pub fn limit_m_sup(pi_true: &[Vec<f64>], alpha_true: &[f64], pi: &[Vec<f64>]) -> Result<LimitSup> {
    let obj = Objective::new(pi_true, alpha_true, pi)?;
    let q = obj.q;
    if q > MAX_LIMIT_Q {
        return Err(DsbmError::UnsupportedSize {
            what: "Q for limit_m_sup",
            size: q as f64,
            cap: MAX_LIMIT_Q as f64,
        });
    }
    let n_vertices = q.pow(q as u32);
    let mut scored: Vec<(f64, usize)> = (0..n_vertices)
        .map(|k| (obj.eval(&vertex(k, q)), k))
        .collect();
    // stable: equal values keep enumeration order
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut best: Option<LimitSup> = None;
    for &(_, k) in scored.iter().take(N_STARTS) {
        let mut a = vertex(k, q);
        let value = ascend(&obj, &mut a);
        if best.as_ref().is_none_or(|b| value > b.value) {
            best = Some(LimitSup { value, a_star: a });
        }
    }
    Ok(best.expect("at least one vertex"))
}

fn vertex(mut k: usize, q: usize) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; q]; q];
    for row in a.iter_mut().rev() {
        row[k % q] = 1.0;
        k /= q;
    }
    a
}

fn ascend(obj: &Objective, a: &mut [Vec<f64>]) -> f64 {
    let q = obj.q;
    let mut f = obj.eval(a);
    for _ in 0..MAX_PASSES {
        let start = f;
        for r in 0..q {
            for c1 in 0..q {
                for c2 in (c1 + 1)..q {
                    // t moves mass from column c1 to column c2
                    let (lo, hi) = (-a[r][c2], a[r][c1]);
                    if hi - lo <= 0.0 {
                        continue;
                    }
                    let (o1, o2) = (a[r][c1], a[r][c2]);
                    let at = |t: f64, a: &mut [Vec<f64>]| {
                        a[r][c1] = o1 - t;
                        a[r][c2] = o2 + t;
                        obj.eval(a)
                    };
                    let mid = 0.5 * (lo + hi);
                    let (flo, fmid, fhi) = (at(lo, a), at(mid, a), at(hi, a));
                    let mut cands = vec![(flo, lo), (fhi, hi), (fmid, mid)];
                    let h = 0.5 * (hi - lo);
                    let curv = (flo - 2.0 * fmid + fhi) / (h * h);
                    if curv < 0.0 {
                        let slope = (fhi - flo) / (2.0 * h);
                        let tv = (mid - slope / curv).clamp(lo, hi);
                        cands.push((at(tv, a), tv));
                    }
                    let (fb, tb) =
                        cands
                            .into_iter()
                            .fold((f, 0.0), |acc, c| if c.0 > acc.0 { c } else { acc });
                    if tb == 0.0 {
                        a[r][c1] = o1;
                        a[r][c2] = o2;
                    } else {
                        a[r][c1] = o1 - tb;
                        a[r][c2] = o2 + tb;
                        if tb == hi {
                            a[r][c1] = 0.0;
                        }
                        if tb == lo {
                            a[r][c2] = 0.0;
                        }
                        f = fb;
                    }
                }
            }
        }
        if f - start <= IMPROVE_TOL {
            break;
        }
    }
    obj.eval(a)
}
