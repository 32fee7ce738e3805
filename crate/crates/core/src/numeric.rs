//! Small numerical helpers shared by the engines: log-space reductions,
//! compensated sums, logistic link functions and the standard normal.

use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::factorial::ln_binomial;

/// `log(sum(exp(v)))`, returning negative infinity for an empty or all-`-inf` slice.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let mut acc = NeumaierSum::default();
    for &v in values {
        acc.add((v - max).exp());
    }
    max + acc.total().ln()
}

/// `log(exp(a) + exp(b))`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `log(exp(a) - exp(b))` for `a >= b`; NaN when `b > a`.
pub fn log_sub_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    if b > a {
        return f64::NAN;
    }
    a + (-(b - a).exp()).ln_1p()
}

/// Neumaier's improved Kahan summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = NeumaierSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Compensated sum of a slice.
pub fn stable_sum(values: &[f64]) -> f64 {
    values.iter().copied().collect::<NeumaierSum>().total()
}

pub fn ln_choose(n: u64, k: u64) -> f64 {
    ln_binomial(n, k)
}

/// `log(1 + exp(t))` without overflow.
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log sigmoid(t)`.
pub fn log_sigmoid(t: f64) -> f64 {
    -softplus(-t)
}

/// `x log(x / y)` with the convention `0 log 0 = 0`.
pub fn xlogy_ratio(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else if y == 0.0 {
        f64::INFINITY
    } else {
        x * (x / y).ln()
    }
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal survival function `1 - cdf(x)`.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile.
pub fn norm_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// Standard normal log density.
pub fn norm_log_pdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Mass of the standard normal on `[lo, hi]`, computed on whichever tail keeps precision.
pub fn norm_interval_mass(lo: f64, hi: f64) -> f64 {
    if lo >= hi {
        return 0.0;
    }
    if lo > 0.0 {
        norm_sf(lo) - norm_sf(hi)
    } else if hi < 0.0 {
        norm_cdf(hi) - norm_cdf(lo)
    } else {
        1.0 - norm_cdf(lo) - norm_sf(hi)
    }
}

/// Inverse-CDF draw of a standard normal truncated to `[lo, hi]` from a uniform `u`.
pub fn truncated_norm_from_uniform(lo: f64, hi: f64, u: f64) -> f64 {
    let x = if lo > 0.0 {
        // Work with survival probabilities so deep upper tails keep precision.
        let (s_lo, s_hi) = (norm_sf(lo), norm_sf(hi));
        -norm_quantile(s_hi + u * (s_lo - s_hi))
    } else {
        let (c_lo, c_hi) = (norm_cdf(lo), norm_cdf(hi));
        norm_quantile(c_lo + u * (c_hi - c_lo))
    };
    if x.is_finite() {
        x.clamp(lo, hi)
    } else if x > 0.0 {
        hi
    } else {
        lo
    }
}

/// Sample mean and its standard error.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = stable_sum(values) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: NeumaierSum = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = ss.total() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_handles_extremes() {
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        let v = logsumexp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_pairs() {
        for &t in &[-800.0, -30.0, -1.0, 0.0, 2.5, 40.0, 900.0] {
            let s = sigmoid(t);
            assert!((0.0..=1.0).contains(&s));
            assert!((log_sigmoid(t) - s.ln()).abs() < 1e-12 || s == 0.0);
        }
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn normal_helpers() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((norm_quantile(0.975) - 1.959963984540054).abs() < 1e-9);
        let m = norm_interval_mass(5.0, 8.0);
        assert!((m - 2.866515718e-7).abs() < 1e-15);
        let x = truncated_norm_from_uniform(6.0, 9.0, 0.5);
        assert!(x > 6.0 && x < 6.3);
    }

    #[test]
    fn log_sub_exp_basic() {
        let v = log_sub_exp(3f64.ln(), 1f64.ln());
        assert!((v - 2f64.ln()).abs() < 1e-14);
    }
}
