//! Parametric families: Bernoulli coins and two-feature style logistic
//! regression with Gaussian covariates. All log quantities are in nats.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numeric::{log_sigmoid, sigmoid, xlogy_ratio};
use crate::rng::rng_from_seed;

/// Default Monte Carlo size for logistic KL and Fisher estimates.
pub const DEFAULT_MC_DRAWS: usize = 100_000;
/// Default seed for logistic KL and Fisher estimates.
pub const DEFAULT_MC_SEED: u64 = 0x5eed_f15e;

/// A parameter vector θ.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPoint {
    coords: Vec<f64>,
}

impl ParamPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() || coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Invalid(format!("parameter must be a finite nonempty vector, got {coords:?}")));
        }
        Ok(Self { coords })
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Self::new(vec![v])
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coords
    }
}

impl std::ops::Deref for ParamPoint {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.coords
    }
}

/// Closed axis-aligned parameter box Λ.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ParamBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Invalid("box bounds must be nonempty and of equal length".into()));
        }
        for (l, u) in lower.iter().zip(&upper) {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::Invalid(format!("box side [{l}, {u}] is empty or non-finite")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn unit(d: usize) -> Self {
        Self { lower: vec![0.0; d], upper: vec![1.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.width(i)).product()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta.iter().zip(self.lower.iter().zip(&self.upper)).all(|(t, (l, u))| *l <= *t && *t <= *u)
    }

    /// Per-coordinate clamp onto the box.
    pub fn project(&self, theta: &mut [f64]) {
        for (i, t) in theta.iter_mut().enumerate() {
            *t = t.clamp(self.lower[i], self.upper[i]);
        }
    }
}

/// Gaussian covariate model with diagonal covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateModel {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl CovariateModel {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| {
                let e: f64 = StandardNormal.sample(rng);
                m + s * e
            })
            .collect()
    }

    /// `E[x x^T]`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        let d = self.mean.len();
        DMatrix::from_fn(d, d, |i, j| {
            let v = self.mean[i] * self.mean[j];
            if i == j {
                v + self.std[i] * self.std[i]
            } else {
                v
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyKind {
    Bernoulli,
    Logistic,
}

/// A single observation z.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Bit(u8),
    Labeled { x: Vec<f64>, y: u8 },
}

impl Observation {
    pub fn label(&self) -> u8 {
        match self {
            Observation::Bit(b) => *b,
            Observation::Labeled { y, .. } => *y,
        }
    }

    pub fn covariates(&self) -> Option<&[f64]> {
        match self {
            Observation::Bit(_) => None,
            Observation::Labeled { x, .. } => Some(x),
        }
    }

    /// Same covariates with the other label.
    pub fn with_label(&self, label: u8) -> Observation {
        match self {
            Observation::Bit(_) => Observation::Bit(label),
            Observation::Labeled { x, .. } => Observation::Labeled { x: x.clone(), y: label },
        }
    }
}

/// A parametric family `P_θ` over a binary outcome, optionally given covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilySpec {
    kind: FamilyKind,
    bounds: ParamBox,
    covariates: Option<CovariateModel>,
}

impl FamilySpec {
    /// Bernoulli on the full unit interval.
    pub fn bernoulli() -> Self {
        Self { kind: FamilyKind::Bernoulli, bounds: ParamBox::unit(1), covariates: None }
    }

    pub fn bernoulli_on(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) {
            return Err(Error::Invalid(format!("Bernoulli box [{lo}, {hi}] must lie in [0, 1]")));
        }
        Ok(Self { kind: FamilyKind::Bernoulli, bounds: ParamBox::new(vec![lo], vec![hi])?, covariates: None })
    }

    pub fn logistic(bounds: ParamBox, covariates: CovariateModel) -> Result<Self> {
        let d = bounds.dim();
        if covariates.mean.len() != d || covariates.std.len() != d {
            return Err(Error::Invalid(format!("covariate model must have dimension {d}")));
        }
        if covariates.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || covariates.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Invalid("covariate covariance must be positive definite".into()));
        }
        Ok(Self { kind: FamilyKind::Logistic, bounds, covariates: Some(covariates) })
    }

    /// The experimental setup: Λ = [0,1]², x ~ N((5,-5), I).
    pub fn logistic_standard() -> Self {
        Self::logistic(ParamBox::unit(2), CovariateModel { mean: vec![5.0, -5.0], std: vec![1.0, 1.0] })
            .expect("valid built-in family")
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn bounds(&self) -> &ParamBox {
        &self.bounds
    }

    pub fn covariate_model(&self) -> Option<&CovariateModel> {
        self.covariates.as_ref()
    }

    /// Validates that a point lies in Λ.
    pub fn point(&self, coords: Vec<f64>) -> Result<ParamPoint> {
        let p = ParamPoint::new(coords)?;
        if !self.bounds.contains(&p) {
            return Err(Error::Invalid(format!("parameter {:?} outside the family box", p.coords())));
        }
        Ok(p)
    }

    /// `P_θ(y = 1 | x)`.
    pub fn prob_one(&self, theta: &[f64], z: &Observation) -> f64 {
        match (self.kind, z) {
            (FamilyKind::Bernoulli, _) => theta[0],
            (FamilyKind::Logistic, Observation::Labeled { x, .. }) => sigmoid(dot(theta, x)),
            (FamilyKind::Logistic, Observation::Bit(_)) => f64::NAN,
        }
    }

    /// Log-likelihood of `z`; negative infinity for impossible outcomes.
    pub fn log_density(&self, theta: &[f64], z: &Observation) -> f64 {
        match self.kind {
            FamilyKind::Bernoulli => {
                let t = theta[0];
                if z.label() == 1 {
                    t.ln()
                } else {
                    (1.0 - t).ln()
                }
            }
            FamilyKind::Logistic => {
                let x = z.covariates().expect("logistic observation carries covariates");
                let s = dot(theta, x);
                if z.label() == 1 {
                    log_sigmoid(s)
                } else {
                    log_sigmoid(-s)
                }
            }
        }
    }

    /// Sum of log-likelihoods.
    pub fn log_likelihood(&self, theta: &[f64], data: &[Observation]) -> f64 {
        let mut acc = 0.0;
        for z in data {
            acc += self.log_density(theta, z);
            if acc == f64::NEG_INFINITY {
                break;
            }
        }
        acc
    }

    pub fn grad_log_density(&self, theta: &[f64], z: &Observation) -> Result<Vec<f64>> {
        match self.kind {
            FamilyKind::Bernoulli => {
                let t = theta[0];
                if t <= 0.0 || t >= 1.0 {
                    return Err(Error::BoundaryGradient(theta.to_vec()));
                }
                Ok(vec![if z.label() == 1 { 1.0 / t } else { -1.0 / (1.0 - t) }])
            }
            FamilyKind::Logistic => {
                let x = z.covariates().expect("logistic observation carries covariates");
                let r = f64::from(z.label()) - sigmoid(dot(theta, x));
                Ok(x.iter().map(|xi| r * xi).collect())
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, theta: &[f64], rng: &mut R) -> Observation {
        match self.kind {
            FamilyKind::Bernoulli => {
                let u: f64 = rng.random();
                Observation::Bit(u8::from(u < theta[0]))
            }
            FamilyKind::Logistic => {
                let x = self.covariates.as_ref().expect("logistic family has covariates").sample(rng);
                let u: f64 = rng.random();
                let y = u8::from(u < sigmoid(dot(theta, &x)));
                Observation::Labeled { x, y }
            }
        }
    }

    pub fn sample_seeded(&self, theta: &[f64], seed: u64) -> Observation {
        self.sample(theta, &mut rng_from_seed(seed))
    }

    pub fn sample_n<R: Rng + ?Sized>(&self, theta: &[f64], n: usize, rng: &mut R) -> Vec<Observation> {
        (0..n).map(|_| self.sample(theta, rng)).collect()
    }

    /// `KL(P_a || P_b)`; logistic uses the default Monte Carlo size and seed.
    pub fn kl_divergence(&self, a: &[f64], b: &[f64]) -> f64 {
        self.kl_divergence_mc(a, b, DEFAULT_MC_DRAWS, DEFAULT_MC_SEED)
    }

    pub fn kl_divergence_mc(&self, a: &[f64], b: &[f64], draws: usize, seed: u64) -> f64 {
        match self.kind {
            FamilyKind::Bernoulli => bernoulli_kl(a[0], b[0]),
            FamilyKind::Logistic => {
                if a == b {
                    return 0.0;
                }
                let cov = self.covariates.as_ref().expect("logistic family has covariates");
                let mut rng = rng_from_seed(seed);
                let mut acc = crate::numeric::NeumaierSum::default();
                for _ in 0..draws {
                    let x = cov.sample(&mut rng);
                    acc.add(bernoulli_kl(sigmoid(dot(a, &x)), sigmoid(dot(b, &x))));
                }
                acc.total() / draws as f64
            }
        }
    }

    /// Maximum-likelihood estimate projected onto Λ. The flag is set when the
    /// Bernoulli sample is all one label and the estimate was pulled inward.
    pub fn mle(&self, data: &[Observation]) -> Result<(ParamPoint, bool)> {
        if data.is_empty() {
            return Err(Error::Invalid("maximum likelihood needs at least one observation".into()));
        }
        match self.kind {
            FamilyKind::Bernoulli => {
                let m = data.len() as f64;
                let k = data.iter().filter(|z| z.label() == 1).count() as f64;
                let mut t = k / m;
                let guarded = k == 0.0 || k == m;
                if guarded {
                    t = t.clamp(1.0 / (m + 2.0), 1.0 - 1.0 / (m + 2.0));
                }
                let mut v = vec![t];
                self.bounds.project(&mut v);
                Ok((ParamPoint::new(v)?, guarded))
            }
            FamilyKind::Logistic => {
                let mut theta = logistic_newton(self.dim(), data);
                self.bounds.project(&mut theta);
                Ok((ParamPoint::new(theta)?, false))
            }
        }
    }

    pub fn fisher_information(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        self.fisher_information_mc(theta, DEFAULT_MC_DRAWS, DEFAULT_MC_SEED)
    }

    pub fn fisher_information_mc(&self, theta: &[f64], draws: usize, seed: u64) -> Result<DMatrix<f64>> {
        match self.kind {
            FamilyKind::Bernoulli => {
                let t = theta[0];
                if t <= 0.0 || t >= 1.0 {
                    return Err(Error::BoundaryFisher(theta.to_vec()));
                }
                Ok(DMatrix::from_element(1, 1, 1.0 / (t * (1.0 - t))))
            }
            FamilyKind::Logistic => {
                let cov = self.covariates.as_ref().expect("logistic family has covariates");
                let d = self.dim();
                let mut rng = rng_from_seed(seed);
                let mut acc = DMatrix::<f64>::zeros(d, d);
                for _ in 0..draws {
                    let x = cov.sample(&mut rng);
                    let s = sigmoid(dot(theta, &x));
                    let w = s * (1.0 - s);
                    for i in 0..d {
                        for j in 0..d {
                            acc[(i, j)] += w * x[i] * x[j];
                        }
                    }
                }
                Ok(acc / draws as f64)
            }
        }
    }
}

fn logistic_loglik(theta: &[f64], data: &[Observation]) -> f64 {
    data.iter()
        .map(|z| {
            let s = dot(theta, z.covariates().expect("labeled"));
            if z.label() == 1 {
                log_sigmoid(s)
            } else {
                log_sigmoid(-s)
            }
        })
        .sum()
}

/// Damped Newton ascent on the logistic log-likelihood, stopping when the
/// mean gradient norm reaches 1e-8, the log-likelihood stalls, or after 10^4
/// iterations. Separable data stops on the stall test.
fn logistic_newton(d: usize, data: &[Observation]) -> Vec<f64> {
    let m = data.len() as f64;
    let mut theta = vec![0.0; d];
    let mut current = logistic_loglik(&theta, data);
    for _ in 0..10_000 {
        let mut g = nalgebra::DVector::<f64>::zeros(d);
        let mut h = DMatrix::<f64>::zeros(d, d);
        for z in data {
            let x = z.covariates().expect("labeled");
            let s = sigmoid(dot(&theta, x));
            let r = f64::from(z.label()) - s;
            let w = s * (1.0 - s);
            for i in 0..d {
                g[i] += r * x[i];
                for j in 0..d {
                    h[(i, j)] += w * x[i] * x[j];
                }
            }
        }
        if g.norm() / m <= 1e-8 {
            break;
        }
        let step = match h.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => g.clone() / m,
        };
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + scale * s).collect();
            let v = logistic_loglik(&cand, data);
            if v >= current {
                let stalled = v - current <= 1e-13 * current.abs().max(1.0);
                theta = cand;
                current = v;
                if stalled {
                    return theta;
                }
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        if !improved {
            break;
        }
    }
    theta
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// KL divergence between Bernoulli(p) and Bernoulli(q).
pub fn bernoulli_kl(p: f64, q: f64) -> f64 {
    if p == q {
        return 0.0;
    }
    xlogy_ratio(p, q) + xlogy_ratio(1.0 - p, 1.0 - q)
}
