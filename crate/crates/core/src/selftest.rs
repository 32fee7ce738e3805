//! Quick oracle checks run by `bayestl selftest`: closed-form Bernoulli
//! mixtures against direct quadrature, and the delta-prior regret floor.

use crate::bernoulli::{exact_expected_regret, ln_mixture_box_prior, ln_mixture_delta_prior, ln_mixture_sum_prior, CountSummary, ExactPrior, SourceMode};
use crate::bounds::negative_floor;
use crate::family::bernoulli_kl;
use crate::quadrature::integrate;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn seq(theta: f64, n: u64, k: u64) -> f64 {
    theta.powi(k as i32) * (1.0 - theta).powi((n - k) as i32)
}

fn sum_prior_error(max_n: u64, max_m: u64) -> f64 {
    let mut err: f64 = 0.0;
    for n in 0..=max_n {
        for m in 0..=max_m {
            for kt in 0..=n {
                for ks in 0..=m {
                    let c = CountSummary { n, k_t: kt, m, k_s: ks };
                    let joint = integrate(
                        |s| integrate(|t| (s + t) * seq(t, n, kt), 0.0, 1.0, 1e-14, 1e-12) * seq(s, m, ks),
                        0.0,
                        1.0,
                        1e-14,
                        1e-12,
                    );
                    let source = integrate(|s| (s + 0.5) * seq(s, m, ks), 0.0, 1.0, 1e-14, 1e-12);
                    err = err.max((ln_mixture_sum_prior(c).exp() - joint / source).abs());
                }
            }
        }
    }
    err
}

fn delta_prior_error(max_n: u64, max_m: u64) -> f64 {
    let mut err: f64 = 0.0;
    for n in 0..=max_n {
        for m in 0..=max_m {
            for kt in 0..=n {
                for ks in 0..=m {
                    let c = CountSummary { n, k_t: kt, m, k_s: ks };
                    let num = integrate(|s| seq(s, n, kt) * seq(s, m, ks), 0.0, 1.0, 1e-14, 1e-12);
                    let den = integrate(|s| seq(s, m, ks), 0.0, 1.0, 1e-14, 1e-12);
                    err = err.max((ln_mixture_delta_prior(c).exp() - num / den).abs());
                }
            }
        }
    }
    err
}

fn box_prior_error(max_n: u64) -> f64 {
    let mut err: f64 = 0.0;
    for &s in &[0.3, 0.5, 0.7] {
        for &c in &[0.05, 0.15, 0.25] {
            for n in 0..=max_n {
                for kt in 0..=n {
                    let direct = integrate(|t| seq(t, n, kt), s - c, s + c, 1e-14, 1e-12) / (2.0 * c);
                    let closed = ln_mixture_box_prior(n, kt, s, c).map(f64::exp).unwrap_or(f64::NAN);
                    err = err.max((closed - direct).abs());
                }
            }
        }
    }
    err
}

pub fn run() -> Vec<Check> {
    let mut out = Vec::new();
    let mut push = |name: &str, err: f64, tol: f64| {
        out.push(Check { name: name.into(), passed: err <= tol, detail: format!("max abs error {err:.3e} (tolerance {tol:.0e})") });
    };
    push("sum prior vs quadrature (n, m <= 6)", sum_prior_error(6, 6), 1e-9);
    push("delta prior vs quadrature (n, m <= 10)", delta_prior_error(10, 10), 1e-9);
    push("box prior vs quadrature (n <= 12)", box_prior_error(12), 1e-9);
    let floor = negative_floor(100.0, bernoulli_kl(0.6, 0.8)).unwrap_or(f64::NAN);
    let exact = exact_expected_regret(0.6, 0.8, ExactPrior::Delta, 100, SourceMode::Saturated).unwrap_or(f64::NAN);
    push("delta prior regret equals n KL", (floor - exact).abs(), 1e-8);
    out
}
