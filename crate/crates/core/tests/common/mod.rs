#![allow(dead_code)]

use bayestl::harness::{parse_config, Experiment};

/// Gauss–Legendre nodes and weights on [-1, 1], by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

fn gl_panel(f: &mut dyn FnMut(f64) -> f64, nodes: &[(f64, f64)], a: f64, b: f64) -> f64 {
    let (h, c) = (0.5 * (b - a), 0.5 * (a + b));
    nodes.iter().map(|&(x, w)| w * f(c + h * x)).sum::<f64>() * h
}

/// Adaptive bisection with a 20-point Gauss–Legendre rule per panel.
pub fn integrate(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let nodes = gauss_legendre(20);
    let mut stack = vec![(a, b, gl_panel(&mut f, &nodes, a, b), 0u32)];
    let mut total = 0.0;
    while let Some((lo, hi, whole, depth)) = stack.pop() {
        let mid = 0.5 * (lo + hi);
        let left = gl_panel(&mut f, &nodes, lo, mid);
        let right = gl_panel(&mut f, &nodes, mid, hi);
        if (left + right - whole).abs() <= tol || depth >= 40 {
            total += left + right;
        } else {
            stack.push((lo, mid, left, depth + 1));
            stack.push((mid, hi, right, depth + 1));
        }
    }
    total
}

/// `θ^k (1-θ)^(n-k)`.
pub fn seq(theta: f64, n: u64, k: u64) -> f64 {
    theta.powi(k as i32) * (1.0 - theta).powi((n - k) as i32)
}

pub fn ln_binom(n: u64, k: u64) -> f64 {
    (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum()
}

pub fn experiment(toml: &str) -> Experiment {
    parse_config(toml, None).expect("valid test scenario")
}

/// Bernoulli scenario with θs known exactly.
pub fn bernoulli_exact(theta_t: f64, theta_s: f64, conditional: &str, n: usize) -> Experiment {
    experiment(&format!(
        r#"
name = "t"
family = {{ kind = "bernoulli" }}
theta_t = [{theta_t}]
theta_s = [{theta_s}]
n = {n}
repeats = 1
algorithms = ["grid"]
prior = {{ {conditional} }}
"#
    ))
}

pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean and standard error of `a[i] - b[i]`.
pub fn paired(a: &[f64], b: &[f64]) -> (f64, f64) {
    assert_eq!(a.len(), b.len());
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    mean_stderr(&d)
}
