//! Efficient mixture posterior updating: a fixed set of particles drawn from
//! the conditional prior, moved by projected gradient steps and reweighted
//! exponentially by their losses.

use std::time::Instant;

use rand::Rng;

use crate::error::{Error, Result};
use crate::family::{FamilySpec, Observation, ParamBox, ParamPoint};
use crate::loss::{LossKind, LossSpec};
use crate::numeric::logsumexp;
use crate::prior::PriorSpec;
use crate::rng::stream;
use crate::scenario::{RegretCurve, Scenario, SourceSpec, TrialData, ALGORITHM_STREAM_BASE};

const INIT_STREAM: u64 = ALGORITHM_STREAM_BASE + 10;
const PREDICT_STREAM: u64 = ALGORITHM_STREAM_BASE + 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictMode {
    /// `Σ ω_i P_θi(·)`.
    Mixture,
    /// Draw one particle by weight and predict with it.
    Sample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpuState {
    particles: Vec<ParamPoint>,
    weights: Vec<f64>,
    eta: f64,
    bounds: ParamBox,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpuPrediction {
    pub prob_one: f64,
    pub log_density: f64,
}

impl EmpuState {
    /// Particles with uniform weights.
    pub fn new(particles: Vec<ParamPoint>, eta: f64, bounds: ParamBox) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::Invalid("EMPU needs at least one particle".into()));
        }
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(Error::Invalid(format!("step size must be nonnegative, got {eta}")));
        }
        if particles.iter().any(|p| !bounds.contains(p)) {
            return Err(Error::Invalid("particles must lie inside the box".into()));
        }
        let n = particles.len();
        Ok(Self { particles, weights: vec![1.0 / n as f64; n], eta, bounds })
    }

    pub fn particles(&self) -> &[ParamPoint] {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }
}

/// Source estimate θ̂s; the flag reports a guarded all-same-label Bernoulli sample.
pub fn estimate_source_param(family: &FamilySpec, data: &[Observation]) -> Result<(ParamPoint, bool)> {
    family.mle(data)
}

/// Draws `n` particles from `ω(· | θ̂s)`. Returns a warning when the
/// conditional is atomic and all particles coincide.
pub fn empu_init(prior: &PriorSpec, theta_s_hat: &[f64], n: usize, eta: f64, seed: u64) -> Result<(EmpuState, Option<String>)> {
    let mut rng = crate::rng::rng_from_seed(seed);
    empu_init_with(prior, theta_s_hat, n, eta, &mut rng)
}

fn empu_init_with<R: Rng + ?Sized>(prior: &PriorSpec, theta_s_hat: &[f64], n: usize, eta: f64, rng: &mut R) -> Result<(EmpuState, Option<String>)> {
    if n == 0 {
        return Err(Error::Invalid("EMPU needs at least one particle".into()));
    }
    let particles: Vec<ParamPoint> = (0..n).map(|_| prior.sample_conditional(theta_s_hat, rng)).collect();
    let warning = (prior.is_atomic() && n > 1).then(|| "atomic conditional: all particles are equal".to_string());
    Ok((EmpuState::new(particles, eta, prior.bounds().clone())?, warning))
}

/// `ℓ(θ, z)` for the losses EMPU can differentiate.
pub fn particle_loss(family: &FamilySpec, loss: &LossSpec, theta: &[f64], z: &Observation) -> Result<f64> {
    match loss.kind {
        LossKind::Log | LossKind::CrossEntropy => Ok(-family.log_density(theta, z)),
        LossKind::Squared => {
            let p = family.prob_one(theta, z);
            let y = f64::from(z.label());
            Ok((p - y) * (p - y))
        }
        LossKind::ZeroOne | LossKind::Hinge => Err(Error::Invalid(format!("{} loss is not differentiable in the parameter", loss.kind.name()))),
    }
}

/// `∇_θ ℓ(θ, z)`.
pub fn particle_loss_grad(family: &FamilySpec, loss: &LossSpec, theta: &[f64], z: &Observation) -> Result<Vec<f64>> {
    match loss.kind {
        LossKind::Log | LossKind::CrossEntropy => Ok(family.grad_log_density(theta, z)?.into_iter().map(|g| -g).collect()),
        LossKind::Squared => {
            // d/dθ (p - y)^2 = 2 (p - y) dp/dθ, and dp/dθ = P(z=1) ∇log P(z=1).
            let p = family.prob_one(theta, z);
            let y = f64::from(z.label());
            let g1 = family.grad_log_density(theta, &z.with_label(1))?;
            Ok(g1.into_iter().map(|g| 2.0 * (p - y) * p * g).collect())
        }
        LossKind::ZeroOne | LossKind::Hinge => Err(Error::Invalid(format!("{} loss is not differentiable in the parameter", loss.kind.name()))),
    }
}

/// One projected gradient step per particle followed by exponential reweighting at the moved particles.
pub fn empu_step(state: &EmpuState, family: &FamilySpec, z: &Observation, loss: &LossSpec, eta: f64) -> Result<EmpuState> {
    let mut next = state.clone();
    next.eta = eta;
    empu_step_in_place(&mut next, family, z, loss)?;
    Ok(next)
}

pub fn empu_step_in_place(state: &mut EmpuState, family: &FamilySpec, z: &Observation, loss: &LossSpec) -> Result<()> {
    let eta = state.eta;
    let mut log_w = Vec::with_capacity(state.len());
    for (p, w) in state.particles.iter_mut().zip(&state.weights) {
        if eta != 0.0 {
            let g = particle_loss_grad(family, loss, p, z)?;
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("EMPU gradient at particle {:?}", p.coords())));
            }
            let mut moved: Vec<f64> = p.iter().zip(&g).map(|(t, gi)| t - eta * gi).collect();
            state.bounds.project(&mut moved);
            *p = ParamPoint::new(moved)?;
        }
        let l = particle_loss(family, loss, p, z)?;
        log_w.push(w.ln() - l);
    }
    let z_norm = logsumexp(&log_w);
    if !z_norm.is_finite() {
        return Err(Error::NonFinite("every EMPU particle weight vanished".into()));
    }
    for (w, lw) in state.weights.iter_mut().zip(&log_w) {
        *w = (lw - z_norm).exp();
    }
    Ok(())
}

/// Index drawn in proportion to the weights.
fn draw_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(weights.len() - 1)
}

/// Predictive for `z` (the label of `z` selects which density is reported).
pub fn empu_predict<R: Rng + ?Sized>(state: &EmpuState, family: &FamilySpec, z: &Observation, mode: PredictMode, rng: &mut R) -> EmpuPrediction {
    match mode {
        PredictMode::Mixture => {
            let one = z.with_label(1);
            let l1: Vec<f64> = state.particles.iter().zip(&state.weights).map(|(p, w)| w.ln() + family.log_density(p, &one)).collect();
            let lz: Vec<f64> = if z.label() == 1 {
                l1.clone()
            } else {
                state.particles.iter().zip(&state.weights).map(|(p, w)| w.ln() + family.log_density(p, z)).collect()
            };
            EmpuPrediction { prob_one: logsumexp(&l1).exp().min(1.0), log_density: logsumexp(&lz) }
        }
        PredictMode::Sample => {
            let i = draw_index(&state.weights, rng);
            let p = &state.particles[i];
            EmpuPrediction { prob_one: family.prob_one(p, z), log_density: family.log_density(p, z) }
        }
    }
}

pub fn empu_predict_seeded(state: &EmpuState, family: &FamilySpec, z: &Observation, mode: PredictMode, seed: u64) -> EmpuPrediction {
    empu_predict(state, family, z, mode, &mut crate::rng::rng_from_seed(seed))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpuOptions {
    pub particles: usize,
    pub eta: f64,
    pub mode: PredictMode,
}

impl Default for EmpuOptions {
    fn default() -> Self {
        Self { particles: 100, eta: 0.01, mode: PredictMode::Mixture }
    }
}

/// Runs EMPU over one trial. Particle draws come from a dedicated stream, so
/// runs with fewer particles use a prefix of the larger particle set.
pub fn run_empu_with(scenario: &Scenario, data: &TrialData, seed: u64, opts: &EmpuOptions) -> Result<RegretCurve> {
    let start = Instant::now();
    let family = &scenario.family;
    let mut init_rng = stream(seed, INIT_STREAM);
    let mut state = match scenario.source {
        SourceSpec::None => {
            let free = PriorSpec::new(family.bounds().clone(), scenario.free_marginal, crate::prior::Conditional::UniformBox)?;
            let particles = (0..opts.particles).map(|_| free.sample_marginal(&mut init_rng)).collect();
            EmpuState::new(particles, opts.eta, family.bounds().clone())?
        }
        SourceSpec::Exact => empu_init_with(&scenario.prior, &scenario.theta_s, opts.particles, opts.eta, &mut init_rng)?.0,
        SourceSpec::Sample { .. } => {
            let (theta_s_hat, _) = estimate_source_param(family, &data.source)?;
            empu_init_with(&scenario.prior, &theta_s_hat, opts.particles, opts.eta, &mut init_rng)?.0
        }
    };
    let mut predict_rng = stream(seed, PREDICT_STREAM);
    let candidates = scenario.loss.default_candidates();
    let mut regrets = Vec::with_capacity(data.target.len());
    let mut mistakes = Vec::with_capacity(data.target.len());
    let step_loss = if scenario.loss.is_density() { scenario.loss } else { LossSpec::log() };
    for (k, z) in data.target.iter().enumerate() {
        let pred = empu_predict(&state, family, z, opts.mode, &mut predict_rng);
        mistakes.push(u8::from(pred.prob_one > 0.5) != z.label());
        if scenario.loss.is_density() {
            if pred.log_density == f64::NEG_INFINITY {
                return Err(Error::InfiniteRegret { step: k + 1, diagnostic: "EMPU predictive density is zero at the observed outcome".into() });
            }
            regrets.push(family.log_density(&scenario.theta_t, z) - pred.log_density);
        } else {
            let (b, _) = scenario.loss.best_action(&candidates, pred.prob_one)?;
            let (b_star, _) = scenario.loss.best_action(&candidates, family.prob_one(&scenario.theta_t, z))?;
            regrets.push(scenario.loss.action_loss(b, z.label()) - scenario.loss.action_loss(b_star, z.label()));
        }
        empu_step_in_place(&mut state, family, z, &step_loss)?;
    }
    Ok(RegretCurve::from_instantaneous(regrets, Some(mistakes), seed, start.elapsed()))
}
