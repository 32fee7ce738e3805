//! Closed-form Bernoulli mixtures and exact expected regrets.
//!
//! Mixture probabilities refer to one particular target sequence; they only
//! depend on its counts. Everything is computed in log space and the public
//! probability functions exponentiate at the end.


use crate::error::{Error, Result};
use crate::numeric::{ln_choose, log_add_exp, log_sub_exp, NeumaierSum};
use crate::quadrature::integrate;

/// Counts of ones in the target (`k_t` of `n`) and source (`k_s` of `m`) samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CountSummary {
    pub n: u64,
    pub k_t: u64,
    pub m: u64,
    pub k_s: u64,
}

impl CountSummary {
    pub fn new(n: u64, k_t: u64, m: u64, k_s: u64) -> Result<Self> {
        if k_t > n || k_s > m {
            return Err(Error::Invalid(format!("invalid counts: k_t={k_t} of n={n}, k_s={k_s} of m={m}")));
        }
        Ok(Self { n, k_t, m, k_s })
    }
}

/// Prior used by the exact regret computations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExactPrior {
    /// `ω(θs, θt) = θs + θt`.
    Sum,
    /// `θt = θs`, uniform θs.
    Delta,
    /// θt uniform on `[θs - c, θs + c]`.
    Box(f64),
}

/// Treatment of the source sample in exact regrets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceMode {
    Finite(u64),
    /// θs known exactly (the `m → ∞` limit).
    Saturated,
}

/// Source-free marginal for the target parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreeMarginal {
    UniformBox,
    LinearPlusHalf,
}

/// `log B(k + 1, n - k + 1) = -log((n + 1) C(n, k))`.
fn ln_seq_beta(n: u64, k: u64) -> f64 {
    -((n + 1) as f64).ln() - ln_choose(n, k)
}

pub fn ln_mixture_sum_prior(c: CountSummary) -> f64 {
    let (n, kt, m, ks) = (c.n as f64, c.k_t as f64, c.m as f64, c.k_s as f64);
    let num = 2.0 * ks + 2.0 + (kt + 1.0) * 2.0 * (m + 2.0) / (n + 2.0);
    ln_seq_beta(c.n, c.k_t) + num.ln() - (m + 2.0 * ks + 4.0).ln()
}

/// Sequence probability under the sum prior, `ω(θs, θt) = θs + θt`.
pub fn mixture_sum_prior(c: CountSummary) -> f64 {
    ln_mixture_sum_prior(c).exp()
}

/// Sum prior with θs known: `ω(θt | θs) = (θs + θt) / (θs + 1/2)`.
pub fn ln_mixture_sum_prior_saturated(n: u64, k_t: u64, theta_s: f64) -> f64 {
    let mean = (k_t as f64 + 1.0) / (n as f64 + 2.0);
    ln_seq_beta(n, k_t) + (theta_s + mean).ln() - (theta_s + 0.5).ln()
}

pub fn ln_mixture_delta_prior(c: CountSummary) -> f64 {
    ln_seq_beta(c.m + c.n, c.k_s + c.k_t) - ln_seq_beta(c.m, c.k_s)
}

/// Sequence probability when θt = θs and θs is uniform.
pub fn mixture_delta_prior(c: CountSummary) -> f64 {
    ln_mixture_delta_prior(c).exp()
}

/// Delta prior with θs known: the sequence probability under `P_θs` itself.
pub fn ln_mixture_delta_prior_saturated(n: u64, k_t: u64, theta_s: f64) -> f64 {
    let k = k_t as f64;
    let r = (n - k_t) as f64;
    let a = if k_t == 0 { 0.0 } else { k * theta_s.ln() };
    let b = if n == k_t { 0.0 } else { r * (1.0 - theta_s).ln() };
    a + b
}

/// Log binomial pmf terms `log C(N, i) x^i (1-x)^(N-i)` for `i = 0..=N`.
fn ln_binomial_pmf_row(big_n: u64, x: f64) -> Vec<f64> {
    let (lx, l1x) = (x.ln(), (-x).ln_1p());
    (0..=big_n)
        .map(|i| ln_choose(big_n, i) + i as f64 * lx + (big_n - i) as f64 * l1x)
        .collect()
}

/// Log of the lower tails `P(Bin(N, x) <= k)` and upper tails `P(Bin(N, x) > k)` for every `k`.
struct Tails {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

fn tails(big_n: u64, x: f64) -> Tails {
    let pmf = ln_binomial_pmf_row(big_n, x);
    let len = pmf.len();
    let mut lower = vec![f64::NEG_INFINITY; len];
    let mut acc = f64::NEG_INFINITY;
    for i in 0..len {
        acc = log_add_exp(acc, pmf[i]);
        lower[i] = acc;
    }
    let mut upper = vec![f64::NEG_INFINITY; len];
    let mut acc = f64::NEG_INFINITY;
    for i in (1..len).rev() {
        acc = log_add_exp(acc, pmf[i]);
        upper[i - 1] = acc;
    }
    Tails { lower, upper }
}

/// Tail sums with compensated summation of terms scaled by their maximum.
fn tail_sum(pmf: &[f64], range: std::ops::Range<usize>) -> f64 {
    let slice = &pmf[range];
    let max = slice.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let s: NeumaierSum = slice.iter().map(|v| (v - max).exp()).collect();
    max + s.total().ln()
}

/// `log ∫_a^b θ^k (1-θ)^(n-k) dθ` for `0 < a < b < 1`, via the binomial-tail
/// form of the incomplete beta recursion.
fn ln_box_integral_from_tails(n: u64, k: u64, a: f64, b: f64, ta: &Tails, tb: &Tails) -> f64 {
    let k = k as usize;
    // ∫ = B(k+1, n-k+1) [P(Bin(n+1,a) <= k) - P(Bin(n+1,b) <= k)]
    //   = B(k+1, n-k+1) [P(Bin(n+1,b) > k) - P(Bin(n+1,a) > k)].
    let (lo_x, lo_y) = (ta.lower[k], tb.lower[k]);
    let (up_x, up_y) = (tb.upper[k], ta.upper[k]);
    let ratio_lo = (lo_y - lo_x).exp();
    let ratio_up = (up_y - up_x).exp();
    let ratio = ratio_lo.min(ratio_up);
    let base = ln_seq_beta(n, k as u64);
    if ratio > 1.0 - 1e-6 || !ratio.is_finite() {
        // Too much cancellation: the box is tiny relative to the curvature.
        return ln_direct_box(n, k as u64, a, b);
    }
    let diff = if ratio_lo <= ratio_up { log_sub_exp(lo_x, lo_y) } else { log_sub_exp(up_x, up_y) };
    base + diff
}

fn ln_direct_box(n: u64, k: u64, a: f64, b: f64) -> f64 {
    let f = |t: f64| k as f64 * t.ln() + (n - k) as f64 * (-t).ln_1p();
    let mid = 0.5 * (a + b);
    let r = f(mid).max(f(a)).max(f(b));
    let v = integrate(|t| (f(t) - r).exp(), a, b, 0.0, 1e-14);
    r + v.ln()
}

/// `log` of the box-prior sequence probability for every `k_t = 0..=n`.
pub fn ln_mixture_box_prior_all(n: u64, theta_s_hat: f64, c: f64) -> Result<Vec<f64>> {
    let (a, b) = check_box(theta_s_hat, c)?;
    let ta = tails_compensated(n + 1, a);
    let tb = tails_compensated(n + 1, b);
    let norm = -(2.0 * c).ln();
    Ok((0..=n).map(|k| norm + ln_box_integral_from_tails(n, k, a, b, &ta, &tb)).collect())
}

fn check_box(theta_s_hat: f64, c: f64) -> Result<(f64, f64)> {
    let (a, b) = (theta_s_hat - c, theta_s_hat + c);
    if !(c > 0.0) || !(a > 0.0) || !(b < 1.0) {
        return Err(Error::BoxOutsideUnitInterval { lo: a, hi: b });
    }
    Ok((a, b))
}

fn tails_compensated(big_n: u64, x: f64) -> Tails {
    // Short rows use exact compensated tail sums; long rows use running log sums.
    if big_n <= 4000 {
        let pmf = ln_binomial_pmf_row(big_n, x);
        let len = pmf.len();
        let lower = (0..len).map(|k| tail_sum(&pmf, 0..k + 1)).collect();
        let upper = (0..len).map(|k| if k + 1 < len { tail_sum(&pmf, k + 1..len) } else { f64::NEG_INFINITY }).collect();
        Tails { lower, upper }
    } else {
        tails(big_n, x)
    }
}

pub fn ln_mixture_box_prior(n: u64, k_t: u64, theta_s_hat: f64, c: f64) -> Result<f64> {
    if k_t > n {
        return Err(Error::Invalid(format!("k_t={k_t} exceeds n={n}")));
    }
    let (a, b) = check_box(theta_s_hat, c)?;
    if n == 0 {
        return Ok(0.0);
    }
    let ta = tails_compensated(n + 1, a);
    let tb = tails_compensated(n + 1, b);
    Ok(-(2.0 * c).ln() + ln_box_integral_from_tails(n, k_t, a, b, &ta, &tb))
}

/// Sequence probability with θt uniform on `[θs_hat - c, θs_hat + c] ⊂ (0, 1)`.
pub fn mixture_box_prior(n: u64, k_t: u64, theta_s_hat: f64, c: f64) -> Result<f64> {
    Ok(ln_mixture_box_prior(n, k_t, theta_s_hat, c)?.exp())
}

/// Source-free sequence probability.
pub fn ln_mixture_free(n: u64, k_t: u64, marginal: FreeMarginal) -> f64 {
    let base = ln_seq_beta(n, k_t);
    match marginal {
        FreeMarginal::UniformBox => base,
        FreeMarginal::LinearPlusHalf => base + (0.5 + (k_t as f64 + 1.0) / (n as f64 + 2.0)).ln(),
    }
}

/// `log P_θ` of one sequence with `k` ones out of `n`.
pub fn ln_seq_prob(theta: f64, n: u64, k: u64) -> f64 {
    ln_mixture_delta_prior_saturated(n, k, theta)
}

/// `log` binomial weights `P(K = k)` for `K ~ Bin(n, θ)`.
pub fn ln_count_weights(theta: f64, n: u64) -> Vec<f64> {
    (0..=n).map(|k| ln_choose(n, k) + ln_seq_prob(theta, n, k)).collect()
}

fn expectation_over_counts(theta_t: f64, n: u64, ln_q: impl Fn(u64) -> f64) -> f64 {
    let w = ln_count_weights(theta_t, n);
    let mut acc = NeumaierSum::default();
    for k in 0..=n {
        let wk = w[k as usize];
        if wk == f64::NEG_INFINITY {
            continue;
        }
        let p = wk.exp();
        if p == 0.0 {
            continue;
        }
        acc.add(p * (ln_seq_prob(theta_t, n, k) - ln_q(k)));
    }
    acc.total()
}

/// Exact expected log-loss regret `E[log P_θt*(D) - log Q(D | D_s)]`.
pub fn exact_expected_regret(theta_t: f64, theta_s: f64, prior: ExactPrior, n: u64, mode: SourceMode) -> Result<f64> {
    check_unit("theta_t", theta_t)?;
    check_unit("theta_s", theta_s)?;
    if n == 0 {
        return Ok(0.0);
    }
    match mode {
        SourceMode::Saturated => match prior {
            ExactPrior::Sum => Ok(expectation_over_counts(theta_t, n, |k| ln_mixture_sum_prior_saturated(n, k, theta_s))),
            ExactPrior::Delta => Ok(expectation_over_counts(theta_t, n, |k| ln_mixture_delta_prior_saturated(n, k, theta_s))),
            ExactPrior::Box(c) => {
                let table = ln_mixture_box_prior_all(n, theta_s, c)?;
                Ok(expectation_over_counts(theta_t, n, |k| table[k as usize]))
            }
        },
        SourceMode::Finite(m) => {
            if n > 10_000 {
                return Err(Error::TooLargeForEnumeration(n as usize));
            }
            if let ExactPrior::Box(_) = prior {
                return Err(Error::RequiresGrid("box prior with finite source sample"));
            }
            let ws = ln_count_weights(theta_s, m);
            let mut acc = NeumaierSum::default();
            for ks in 0..=m {
                let p = ws[ks as usize].exp();
                if p == 0.0 {
                    continue;
                }
                let inner = expectation_over_counts(theta_t, n, |k| {
                    let c = CountSummary { n, k_t: k, m, k_s: ks };
                    match prior {
                        ExactPrior::Sum => ln_mixture_sum_prior(c),
                        _ => ln_mixture_delta_prior(c),
                    }
                });
                acc.add(p * inner);
            }
            Ok(acc.total())
        }
    }
}

/// Exact expected regret of the source-free mixture.
pub fn regret_without_source(theta_t: f64, n: u64, marginal: FreeMarginal) -> Result<f64> {
    check_unit("theta_t", theta_t)?;
    if n == 0 {
        return Ok(0.0);
    }
    Ok(expectation_over_counts(theta_t, n, |k| ln_mixture_free(n, k, marginal)))
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Invalid(format!("{name} = {v} outside [0, 1]")));
    }
    Ok(())
}
