//! Small numerical helpers shared across modules.

/// `log(sum(exp(xs)))`, returning `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Streaming log-sum-exp accumulator. Keeps a running maximum so that the
/// scaled sum never overflows.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    scaled: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            scaled: 0.0,
        }
    }
}

impl LogSumExp {
    pub fn push(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x <= self.max {
            self.scaled += (x - self.max).exp();
        } else {
            self.scaled = self.scaled * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    pub fn merge(&mut self, other: &LogSumExp) {
        if other.max == f64::NEG_INFINITY {
            return;
        }
        if other.max <= self.max {
            self.scaled += other.scaled * (other.max - self.max).exp();
        } else {
            self.scaled = self.scaled * (self.max - other.max).exp() + other.scaled;
            self.max = other.max;
        }
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}

/// `x log x` with the convention `0 log 0 = 0`.
#[inline]
pub fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// `x log y` with the convention `0 log y = 0` for any `y`.
#[inline]
pub fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

/// Euclidean projection of `v` onto `{x : sum x = 1, lo <= x_i <= hi}`.
///
/// Requires `n * lo <= 1 <= n * hi`. Solved by bisection on the shift `λ` in
/// `x_i = clamp(v_i - λ, lo, hi)`.
pub fn project_capped_simplex(v: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    if v.iter().all(|x| (lo..=hi).contains(x)) && (v.iter().sum::<f64>() - 1.0).abs() <= 1e-12 {
        return v.to_vec();
    }
    let sum_at = |lam: f64| -> f64 { v.iter().map(|&x| (x - lam).clamp(lo, hi)).sum() };
    let vmax = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let vmin = v.iter().copied().fold(f64::INFINITY, f64::min);
    let mut a = vmin - hi - 1.0;
    let mut b = vmax - lo + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if sum_at(mid) > 1.0 {
            a = mid;
        } else {
            b = mid;
        }
        if b - a < 1e-16 {
            break;
        }
    }
    let lam = 0.5 * (a + b);
    let mut x: Vec<f64> = v.iter().map(|&x| (x - lam).clamp(lo, hi)).collect();
    // absorb the bisection residue into the coordinates that are not at a bound
    let resid = 1.0 - x.iter().sum::<f64>();
    let free: Vec<usize> = (0..x.len()).filter(|&i| x[i] > lo && x[i] < hi).collect();
    if !free.is_empty() {
        let share = resid / free.len() as f64;
        for i in free {
            x[i] += share;
        }
    }
    x
}
