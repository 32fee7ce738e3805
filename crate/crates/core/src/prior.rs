//! Joint priors `ω(θs, θt) = ω(θs) ω(θt | θs)` over a parameter box, the
//! time-variant extension `ω(θ_{t,i} | θ_{t,i-1}, θs)`, sampling and
//! properness diagnostics.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::family::{ParamBox, ParamPoint};
use crate::numeric::{norm_interval_mass, norm_log_pdf, truncated_norm_from_uniform};
use crate::quadrature::integrate;
use crate::rng::rng_from_seed;

/// Source marginal `ω(θs)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Marginal {
    UniformBox,
    /// Product of `θ + 1/2` per coordinate, normalized on the box (exactly `θ + 1/2` on `[0, 1]`).
    LinearPlusHalf,
}

/// One-dimensional transition kernel, normalized on a side of the box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    /// Uniform on `[center - c, center + c]` clipped to the side.
    Box(f64),
    /// Gaussian with standard deviation `c`, truncated to the side.
    Gaussian(f64),
}

impl Kernel {
    pub fn scale(&self) -> f64 {
        match *self {
            Kernel::Box(c) | Kernel::Gaussian(c) => c,
        }
    }

    /// Log density of `x` given `center` on `[lo, hi]`.
    pub fn log_density(&self, x: f64, center: f64, lo: f64, hi: f64) -> f64 {
        match *self {
            Kernel::Box(c) => {
                if (x - center).abs() > c {
                    return f64::NEG_INFINITY;
                }
                let w = (center + c).min(hi) - (center - c).max(lo);
                -w.ln()
            }
            Kernel::Gaussian(c) => {
                let mass = norm_interval_mass((lo - center) / c, (hi - center) / c);
                norm_log_pdf((x - center) / c) - c.ln() - mass.ln()
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, center: f64, lo: f64, hi: f64, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        match *self {
            Kernel::Box(c) => {
                let a = (center - c).max(lo);
                let b = (center + c).min(hi);
                (a + u * (b - a)).clamp(a, b)
            }
            Kernel::Gaussian(c) => center + c * truncated_norm_from_uniform((lo - center) / c, (hi - center) / c, u),
        }
    }
}

/// Tabulated conditional density for scalar parameters.
///
/// Rows are indexed by θs, columns by θt, both on a regular grid over the same
/// interval. Each row is normalized by its trapezoid integral, so the
/// piecewise-linear interpolant in θt integrates to one exactly; rows are
/// interpolated linearly in θs.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    lo: f64,
    hi: f64,
    rows: Vec<Vec<f64>>,
}

impl GridDensity {
    pub fn new(lo: f64, hi: f64, rows: Vec<Vec<f64>>) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::Invalid(format!("grid density bounds [{lo}, {hi}] are empty")));
        }
        if rows.len() < 2 || rows.iter().any(|r| r.len() < 2 || r.len() != rows[0].len()) {
            return Err(Error::Invalid("grid density needs at least 2x2 values with equal row lengths".into()));
        }
        let cols = rows[0].len();
        let h = (hi - lo) / (cols - 1) as f64;
        let mut normalized = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Invalid(format!("grid density row {i} has negative or non-finite values")));
            }
            let mass = trapezoid(row, h);
            if mass <= 0.0 {
                return Err(Error::Invalid(format!("grid density row {i} integrates to zero")));
            }
            normalized.push(row.iter().map(|v| v / mass).collect::<Vec<_>>());
        }
        let g = Self { lo, hi, rows: normalized };
        for i in 0..g.rows.len() {
            let theta_s = g.row_position(i);
            let total: f64 = (0..cols - 1)
                .map(|j| {
                    let a = lo + j as f64 * h;
                    integrate(|t| g.density(t, theta_s), a, a + h, 1e-14, 1e-12)
                })
                .sum();
            if (total - 1.0).abs() > 1e-6 {
                return Err(Error::Invalid(format!("grid density row {i} integrates to {total}, not 1")));
            }
        }
        Ok(g)
    }

    /// Reads the plain-text format:
    ///
    /// ```text
    /// # comments
    /// bounds <lo> <hi>
    /// resolution <rows> <cols>
    /// <rows lines of cols whitespace-separated values>
    /// ```
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text).map_err(|message| Error::Parse { path: path.to_path_buf(), message })
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut bounds = None;
        let mut shape = None;
        let mut rows = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let head = parts.next().unwrap_or_default();
            let nums = |it: std::str::SplitWhitespace<'_>| -> std::result::Result<Vec<f64>, String> {
                it.map(|s| s.parse::<f64>().map_err(|e| format!("line {}: {e}", ln + 1))).collect()
            };
            match head {
                "bounds" => {
                    let v = nums(parts)?;
                    if v.len() != 2 {
                        return Err(format!("line {}: bounds needs two values", ln + 1));
                    }
                    bounds = Some((v[0], v[1]));
                }
                "resolution" => {
                    let v: Vec<usize> = parts
                        .map(|s| s.parse::<usize>().map_err(|e| format!("line {}: {e}", ln + 1)))
                        .collect::<std::result::Result<_, _>>()?;
                    if v.len() != 2 {
                        return Err(format!("line {}: resolution needs two values", ln + 1));
                    }
                    shape = Some((v[0], v[1]));
                }
                _ => rows.push(nums(line.split_whitespace())?),
            }
        }
        let (lo, hi) = bounds.ok_or("missing bounds header")?;
        let (r, c) = shape.ok_or("missing resolution header")?;
        if rows.len() != r || rows.iter().any(|row| row.len() != c) {
            return Err(format!("expected a {r}x{c} matrix"));
        }
        Self::new(lo, hi, rows).map_err(|e| e.to_string())
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    fn row_position(&self, i: usize) -> f64 {
        self.lo + (self.hi - self.lo) * i as f64 / (self.rows.len() - 1) as f64
    }

    fn row_weights(&self, theta_s: f64) -> (usize, f64) {
        let r = self.rows.len();
        let u = ((theta_s - self.lo) / (self.hi - self.lo) * (r - 1) as f64).clamp(0.0, (r - 1) as f64);
        let i = (u.floor() as usize).min(r - 2);
        (i, u - i as f64)
    }

    fn row_value(row: &[f64], lo: f64, hi: f64, t: f64) -> f64 {
        if t < lo || t > hi {
            return 0.0;
        }
        let c = row.len();
        let u = (t - lo) / (hi - lo) * (c - 1) as f64;
        let j = (u.floor() as usize).min(c - 2);
        let w = u - j as f64;
        row[j] * (1.0 - w) + row[j + 1] * w
    }

    pub fn density(&self, theta_t: f64, theta_s: f64) -> f64 {
        let (i, w) = self.row_weights(theta_s);
        let a = Self::row_value(&self.rows[i], self.lo, self.hi, theta_t);
        let b = Self::row_value(&self.rows[i + 1], self.lo, self.hi, theta_t);
        a * (1.0 - w) + b * w
    }

    fn sample<R: Rng + ?Sized>(&self, theta_s: f64, rng: &mut R) -> f64 {
        let (i, w) = self.row_weights(theta_s);
        let row = if rng.random::<f64>() < w { &self.rows[i + 1] } else { &self.rows[i] };
        let c = row.len();
        let h = (self.hi - self.lo) / (c - 1) as f64;
        let masses: Vec<f64> = (0..c - 1).map(|j| 0.5 * h * (row[j] + row[j + 1])).collect();
        let total: f64 = masses.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut cell = c - 2;
        for (j, m) in masses.iter().enumerate() {
            if u < *m {
                cell = j;
                break;
            }
            u -= m;
        }
        // Linear density a + (b - a) s on the cell, s in [0, 1].
        let (a, b) = (row[cell], row[cell + 1]);
        let v: f64 = rng.random();
        let s = if (b - a).abs() < 1e-12 * (a + b).max(1e-300) {
            v
        } else {
            let disc = a * a + v * (b * b - a * a);
            (disc.max(0.0).sqrt() - a) / (b - a)
        };
        self.lo + h * (cell as f64 + s.clamp(0.0, 1.0))
    }
}

fn trapezoid(row: &[f64], h: f64) -> f64 {
    let inner: f64 = row[1..row.len() - 1].iter().sum();
    h * (inner + 0.5 * (row[0] + row[row.len() - 1]))
}

/// Conditional `ω(θt | θs)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Conditional {
    /// θt independent of θs, uniform on the box.
    UniformBox,
    /// `(θs + θt) / ∫(θs + t) dt` for scalar parameters.
    SumLinear,
    /// θt = θs exactly.
    Delta,
    /// Uniform on the cube of half-width `c` around θs, clipped and renormalized.
    BoxConditional(f64),
    /// Independent truncated Gaussians with per-coordinate standard deviations.
    GaussianConditional(Vec<f64>),
    GridDensity(GridDensity),
}

/// Time-variant conditional: first `shared` coordinates follow `kernel`
/// around θs, the next `common` coordinates follow it around the previous
/// episode's parameter, and the rest are uniform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvtlConditional {
    pub kernel: Kernel,
}

impl TvtlConditional {
    pub fn log_density(&self, bounds: &ParamBox, theta: &[f64], prev: &[f64], theta_s: &[f64], shared: usize, common: usize) -> f64 {
        let mut acc = 0.0;
        for k in 0..theta.len() {
            let (lo, hi) = (bounds.lower()[k], bounds.upper()[k]);
            acc += if k < shared {
                self.kernel.log_density(theta[k], theta_s[k], lo, hi)
            } else if k < shared + common {
                self.kernel.log_density(theta[k], prev[k], lo, hi)
            } else {
                -(hi - lo).ln()
            };
        }
        acc
    }
}

/// Outcome of the properness diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct PropernessVerdict {
    pub marginal_proper: bool,
    pub conditional_proper: bool,
    /// Radii `(δs, δt)` at which positivity held.
    pub witness: Option<(f64, f64)>,
    /// A `(θs, θt)` pair with zero conditional density at the smallest radius tried.
    pub violation: Option<(Vec<f64>, Vec<f64>)>,
}

/// The joint prior.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    bounds: ParamBox,
    marginal: Marginal,
    conditional: Conditional,
    tvtl: Option<TvtlConditional>,
}

impl PriorSpec {
    pub fn new(bounds: ParamBox, marginal: Marginal, conditional: Conditional) -> Result<Self> {
        let d = bounds.dim();
        match &conditional {
            Conditional::BoxConditional(c) if !(c.is_finite() && *c > 0.0) => {
                return Err(Error::Invalid(format!("box half-width must be positive, got {c}")));
            }
            Conditional::GaussianConditional(c) => {
                if c.len() != d || c.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(Error::Invalid(format!("gaussian scales must be {d} positive values, got {c:?}")));
                }
            }
            Conditional::SumLinear if d != 1 || bounds.lower()[0] < 0.0 => {
                return Err(Error::Invalid("sum-linear prior needs a scalar parameter with nonnegative box".into()));
            }
            Conditional::GridDensity(g) => {
                if d != 1 {
                    return Err(Error::Invalid("tabulated conditionals support scalar parameters only".into()));
                }
                if g.bounds() != (bounds.lower()[0], bounds.upper()[0]) {
                    return Err(Error::Invalid("tabulated conditional bounds must equal the parameter box".into()));
                }
            }
            _ => {}
        }
        if marginal == Marginal::LinearPlusHalf && bounds.lower().iter().any(|l| *l < -0.5) {
            return Err(Error::Invalid("linear-plus-half marginal would be negative on the box".into()));
        }
        Ok(Self { bounds, marginal, conditional, tvtl: None })
    }

    pub fn with_tvtl(mut self, tvtl: TvtlConditional) -> Result<Self> {
        if !(tvtl.kernel.scale().is_finite() && tvtl.kernel.scale() > 0.0) {
            return Err(Error::Invalid("time-variant kernel scale must be positive".into()));
        }
        self.tvtl = Some(tvtl);
        Ok(self)
    }

    pub fn bounds(&self) -> &ParamBox {
        &self.bounds
    }

    pub fn marginal(&self) -> Marginal {
        self.marginal
    }

    pub fn conditional(&self) -> &Conditional {
        &self.conditional
    }

    pub fn tvtl(&self) -> Option<&TvtlConditional> {
        self.tvtl.as_ref()
    }

    pub fn is_atomic(&self) -> bool {
        matches!(self.conditional, Conditional::Delta)
    }

    /// Whether the conditional is a product of per-coordinate kernels.
    pub fn separable_kernel(&self) -> Option<Vec<Kernel>> {
        let d = self.bounds.dim();
        match &self.conditional {
            Conditional::BoxConditional(c) => Some(vec![Kernel::Box(*c); d]),
            Conditional::GaussianConditional(c) => Some(c.iter().map(|v| Kernel::Gaussian(*v)).collect()),
            _ => None,
        }
    }

    pub fn marginal_density(&self, theta_s: &[f64]) -> f64 {
        match self.marginal {
            Marginal::UniformBox => {
                if self.bounds.contains(theta_s) {
                    1.0 / self.bounds.volume()
                } else {
                    0.0
                }
            }
            Marginal::LinearPlusHalf => {
                if !self.bounds.contains(theta_s) {
                    return 0.0;
                }
                (0..self.bounds.dim())
                    .map(|k| {
                        let (l, u) = (self.bounds.lower()[k], self.bounds.upper()[k]);
                        (theta_s[k] + 0.5) / (0.5 * (u * u - l * l) + 0.5 * (u - l))
                    })
                    .product()
            }
        }
    }

    pub fn log_marginal_density(&self, theta_s: &[f64]) -> f64 {
        self.marginal_density(theta_s).ln()
    }

    /// `log ω(θt | θs)`; errors for the atomic conditional.
    pub fn log_conditional_density(&self, theta_t: &[f64], theta_s: &[f64]) -> Result<f64> {
        if !self.bounds.contains(theta_t) {
            return Ok(f64::NEG_INFINITY);
        }
        let (lo, hi) = (self.bounds.lower(), self.bounds.upper());
        Ok(match &self.conditional {
            Conditional::UniformBox => -self.bounds.volume().ln(),
            Conditional::SumLinear => {
                let (l, u) = (lo[0], hi[0]);
                let norm = theta_s[0] * (u - l) + 0.5 * (u * u - l * l);
                ((theta_s[0] + theta_t[0]) / norm).ln()
            }
            Conditional::Delta => return Err(Error::AtomicConditional),
            Conditional::BoxConditional(c) => {
                let k = Kernel::Box(*c);
                (0..theta_t.len()).map(|i| k.log_density(theta_t[i], theta_s[i], lo[i], hi[i])).sum()
            }
            Conditional::GaussianConditional(c) => (0..theta_t.len())
                .map(|i| Kernel::Gaussian(c[i]).log_density(theta_t[i], theta_s[i], lo[i], hi[i]))
                .sum(),
            Conditional::GridDensity(g) => g.density(theta_t[0], theta_s[0]).ln(),
        })
    }

    pub fn conditional_density(&self, theta_t: &[f64], theta_s: &[f64]) -> Result<f64> {
        Ok(self.log_conditional_density(theta_t, theta_s)?.exp())
    }

    pub fn sample_marginal<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamPoint {
        let d = self.bounds.dim();
        let coords = (0..d)
            .map(|k| {
                let (l, u) = (self.bounds.lower()[k], self.bounds.upper()[k]);
                let v: f64 = rng.random();
                match self.marginal {
                    Marginal::UniformBox => l + v * (u - l),
                    Marginal::LinearPlusHalf => linear_inverse_cdf(l, u, 0.5, v),
                }
            })
            .collect();
        ParamPoint::new(coords).expect("finite draw")
    }

    /// Draws θt from `ω(· | θs)`; the atomic conditional returns θs itself.
    pub fn sample_conditional<R: Rng + ?Sized>(&self, theta_s: &[f64], rng: &mut R) -> ParamPoint {
        let d = self.bounds.dim();
        let (lo, hi) = (self.bounds.lower(), self.bounds.upper());
        let coords: Vec<f64> = match &self.conditional {
            Conditional::Delta => theta_s.to_vec(),
            Conditional::UniformBox => (0..d).map(|k| lo[k] + rng.random::<f64>() * (hi[k] - lo[k])).collect(),
            Conditional::SumLinear => vec![linear_inverse_cdf(lo[0], hi[0], theta_s[0], rng.random())],
            Conditional::BoxConditional(c) => (0..d).map(|k| Kernel::Box(*c).sample(theta_s[k], lo[k], hi[k], rng)).collect(),
            Conditional::GaussianConditional(c) => {
                (0..d).map(|k| Kernel::Gaussian(c[k]).sample(theta_s[k], lo[k], hi[k], rng)).collect()
            }
            Conditional::GridDensity(g) => vec![g.sample(theta_s[0], rng)],
        };
        ParamPoint::new(coords).expect("finite draw")
    }

    /// Seeded joint draw `(θs, θt)`.
    pub fn sample_joint(&self, seed: u64) -> (ParamPoint, ParamPoint) {
        let mut rng = rng_from_seed(seed);
        let s = self.sample_marginal(&mut rng);
        let t = self.sample_conditional(&s, &mut rng);
        (s, t)
    }

    /// Default radii tried by [`PriorSpec::properness_check`].
    pub fn default_delta_grid() -> Vec<f64> {
        (1..=9).map(|e| 10f64.powi(-e)).collect()
    }

    /// Positivity diagnostic at the true parameters.
    pub fn properness_check(&self, theta_t: &[f64], theta_s: &[f64], delta_grid: &[f64]) -> PropernessVerdict {
        let d = self.bounds.dim();
        let marginal_proper = {
            let res = if d == 1 { 1001 } else { 101 };
            let mut ok = true;
            let mut idx = vec![0usize; d];
            'outer: loop {
                let p: Vec<f64> = (0..d)
                    .map(|k| self.bounds.lower()[k] + self.bounds.width(k) * idx[k] as f64 / (res - 1) as f64)
                    .collect();
                if self.marginal_density(&p) <= 0.0 {
                    ok = false;
                    break;
                }
                for k in 0..d {
                    idx[k] += 1;
                    if idx[k] < res {
                        continue 'outer;
                    }
                    idx[k] = 0;
                }
                break;
            }
            ok
        };
        if self.is_atomic() {
            return PropernessVerdict {
                marginal_proper,
                conditional_proper: false,
                witness: None,
                violation: Some((theta_s.to_vec(), theta_t.to_vec())),
            };
        }
        let offsets = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let mut last_violation = None;
        let mut sorted: Vec<f64> = delta_grid.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        for &delta in &sorted {
            let mut violation = None;
            let total = offsets.len().pow(2 * d as u32);
            for code in 0..total {
                let mut c = code;
                let mut s = theta_s.to_vec();
                let mut t = theta_t.to_vec();
                for k in 0..d {
                    s[k] = (s[k] + delta * offsets[c % 5]).clamp(self.bounds.lower()[k], self.bounds.upper()[k]);
                    c /= 5;
                    t[k] = (t[k] + delta * offsets[c % 5]).clamp(self.bounds.lower()[k], self.bounds.upper()[k]);
                    c /= 5;
                }
                let dens = self.log_conditional_density(&t, &s).unwrap_or(f64::NEG_INFINITY);
                if dens == f64::NEG_INFINITY {
                    violation = Some((s, t));
                    break;
                }
            }
            match violation {
                None => {
                    return PropernessVerdict { marginal_proper, conditional_proper: true, witness: Some((delta, delta)), violation: None };
                }
                Some(v) => last_violation = Some(v),
            }
        }
        PropernessVerdict { marginal_proper, conditional_proper: false, witness: None, violation: last_violation }
    }
}

/// Inverse CDF of the density proportional to `x + offset` on `[l, u]`.
fn linear_inverse_cdf(l: f64, u: f64, offset: f64, v: f64) -> f64 {
    let (a, b) = (l + offset, u + offset);
    if a.abs() < 1e-300 && b.abs() < 1e-300 {
        return l + v * (u - l);
    }
    let x = (a * a + v * (b * b - a * a)).max(0.0).sqrt() - offset;
    x.clamp(l, u)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_prior(c: Conditional) -> PriorSpec {
        PriorSpec::new(ParamBox::unit(1), Marginal::UniformBox, c).unwrap()
    }

    #[test]
    fn documented_values() {
        let p = PriorSpec::new(ParamBox::unit(1), Marginal::LinearPlusHalf, Conditional::SumLinear).unwrap();
        assert!((p.conditional_density(&[0.5], &[0.5]).unwrap() - 1.0).abs() < 1e-15);
        assert!((p.marginal_density(&[0.5]) - 1.0).abs() < 1e-15);
        assert!((p.marginal_density(&[1.0]) - 1.5).abs() < 1e-15);
        let b = unit_prior(Conditional::BoxConditional(0.1));
        assert!((b.conditional_density(&[0.55], &[0.5]).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(b.conditional_density(&[0.7], &[0.5]).unwrap(), 0.0);
        assert!((unit_prior(Conditional::UniformBox).marginal_density(&[0.3]) - 1.0).abs() < 1e-15);
        assert!(matches!(unit_prior(Conditional::Delta).conditional_density(&[0.5], &[0.5]), Err(Error::AtomicConditional)));
    }

    #[test]
    fn clipped_box_renormalizes() {
        let b = unit_prior(Conditional::BoxConditional(0.1));
        assert!((b.conditional_density(&[0.0], &[0.05]).unwrap() - 1.0 / 0.15).abs() < 1e-12);
    }

    #[test]
    fn grid_density_parse_and_normalize() {
        let text = "# test\nbounds 0 1\nresolution 2 3\n1 1 1\n0 1 2\n";
        let g = GridDensity::parse(text).unwrap();
        assert!((g.density(0.3, 0.0) - 1.0).abs() < 1e-12);
        assert!((g.density(1.0, 1.0) - 2.0).abs() < 1e-12);
        assert!(GridDensity::parse("bounds 0 1\nresolution 2 2\n1 1\n").is_err());
    }

    #[test]
    fn properness_examples() {
        let delta = PriorSpec::default_delta_grid();
        let b = unit_prior(Conditional::BoxConditional(0.1));
        assert!(b.properness_check(&[1.0 / 3.0], &[0.35], &delta).conditional_proper);
        let tight = unit_prior(Conditional::BoxConditional(0.0001));
        assert!(!tight.properness_check(&[1.0 / 3.0], &[0.4], &delta).conditional_proper);
        let d = unit_prior(Conditional::Delta);
        assert!(!d.properness_check(&[0.6], &[0.8], &delta).conditional_proper);
    }
}
