//! Comparison learners: HomOTL-I and the source-free mixture strategy.

use std::time::Instant;

use rand::Rng;

use crate::error::{Error, Result};
use crate::family::{dot, FamilyKind, Observation, ParamPoint};
use crate::numeric::{log_sigmoid, logsumexp, sigmoid};
use crate::rng::stream;
use crate::scenario::{RegretCurve, Scenario, SourceSpec, TrialData, ALGORITHM_STREAM_BASE};

const INIT_STREAM: u64 = ALGORITHM_STREAM_BASE + 20;

/// Loss pair used for weighting (`ℓ*`) and for the target update (`ℓ`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HomOtlVariant {
    /// Cross-entropy for both; models output `σ(θᵀx)`.
    CrossEntropy,
    /// Squared `ℓ*` on the truncated-linear probability, hinge `ℓ` on the score.
    HingeSquared,
}

/// Initial target model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HomOtlInit {
    Zero,
    /// Uniform over the parameter box.
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomOtlState {
    pub w_s: f64,
    pub w_t: f64,
    pub theta_s: ParamPoint,
    pub theta_t: Vec<f64>,
    pub eta: f64,
    pub variant: HomOtlVariant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomOtlPrediction {
    pub label: u8,
    pub prob_one: f64,
}

impl HomOtlState {
    pub fn new(theta_s: ParamPoint, theta_t: Vec<f64>, eta: f64, variant: HomOtlVariant) -> Result<Self> {
        if theta_s.dim() != theta_t.len() {
            return Err(Error::Invalid("source and target models differ in dimension".into()));
        }
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(Error::Invalid(format!("step size must be nonnegative, got {eta}")));
        }
        Ok(Self { w_s: 0.5, w_t: 0.5, theta_s, theta_t, eta, variant })
    }

    /// Sets the initial domain weights; they are renormalized.
    pub fn with_weights(mut self, w_s: f64, w_t: f64) -> Result<Self> {
        let total = w_s + w_t;
        if !(w_s >= 0.0 && w_t >= 0.0 && total > 0.0 && total.is_finite()) {
            return Err(Error::Invalid("domain weights must be nonnegative with a positive sum".into()));
        }
        self.w_s = w_s / total;
        self.w_t = w_t / total;
        Ok(self)
    }
}

fn model_prob(variant: HomOtlVariant, theta: &[f64], x: &[f64]) -> f64 {
    let f = dot(theta, x);
    match variant {
        HomOtlVariant::CrossEntropy => sigmoid(f),
        HomOtlVariant::HingeSquared => (f.clamp(-1.0, 1.0) + 1.0) / 2.0,
    }
}

fn weighting_loss(variant: HomOtlVariant, theta: &[f64], x: &[f64], y: u8) -> f64 {
    let f = dot(theta, x);
    match variant {
        HomOtlVariant::CrossEntropy => {
            if y == 1 {
                -log_sigmoid(f)
            } else {
                -log_sigmoid(-f)
            }
        }
        HomOtlVariant::HingeSquared => {
            let p = model_prob(variant, theta, x);
            let d = p - f64::from(y);
            d * d
        }
    }
}

fn covariates(z: &Observation) -> Result<&[f64]> {
    z.covariates().ok_or_else(|| Error::Invalid("HomOTL-I needs labelled covariate observations".into()))
}

/// `ω_s σ(θ_sᵀx) + ω_t σ(θ_tᵀx)`, labelled 1 only above one half.
pub fn homotl_predict(state: &HomOtlState, x: &[f64]) -> HomOtlPrediction {
    let p = state.w_s * model_prob(state.variant, &state.theta_s, x) + state.w_t * model_prob(state.variant, &state.theta_t, x);
    HomOtlPrediction { label: u8::from(p > 0.5), prob_one: p }
}

pub fn homotl_step(state: &HomOtlState, z: &Observation) -> Result<HomOtlState> {
    let mut next = state.clone();
    homotl_step_in_place(&mut next, z)?;
    Ok(next)
}

pub fn homotl_step_in_place(state: &mut HomOtlState, z: &Observation) -> Result<()> {
    let x = covariates(z)?;
    let y = z.label();
    let ls = weighting_loss(state.variant, &state.theta_s, x, y);
    let lt = weighting_loss(state.variant, &state.theta_t, x, y);
    if ls.is_nan() || lt.is_nan() || ls == f64::NEG_INFINITY || lt == f64::NEG_INFINITY {
        return Err(Error::NonFinite(format!("HomOTL weighting loss: source {ls}, target {lt}")));
    }
    let lw = [state.w_s.ln() - ls, state.w_t.ln() - lt];
    let norm = logsumexp(&lw);
    if !norm.is_finite() {
        return Err(Error::NonFinite("both HomOTL domain weights vanished".into()));
    }
    state.w_s = (lw[0] - norm).exp();
    state.w_t = (lw[1] - norm).exp();

    let f = dot(&state.theta_t, x);
    match state.variant {
        HomOtlVariant::CrossEntropy => {
            let g = sigmoid(f) - f64::from(y);
            for (t, xi) in state.theta_t.iter_mut().zip(x) {
                *t -= state.eta * g * xi;
            }
        }
        HomOtlVariant::HingeSquared => {
            let s = 2.0 * f64::from(y) - 1.0;
            if s * f < 1.0 {
                for (t, xi) in state.theta_t.iter_mut().zip(x) {
                    *t += state.eta * s * xi;
                }
            }
        }
    }
    if state.theta_t.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("HomOTL target model diverged".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomOtlOptions {
    pub eta: f64,
    pub variant: HomOtlVariant,
    pub init: HomOtlInit,
}

impl Default for HomOtlOptions {
    fn default() -> Self {
        Self { eta: 0.01, variant: HomOtlVariant::CrossEntropy, init: HomOtlInit::Zero }
    }
}

/// One HomOTL-I trial on a logistic scenario. Regret is scored with the log
/// loss of the combined probability.
pub fn run_homotl_with(scenario: &Scenario, data: &TrialData, seed: u64, opts: &HomOtlOptions) -> Result<RegretCurve> {
    let start = Instant::now();
    let family = &scenario.family;
    if family.kind() != FamilyKind::Logistic {
        return Err(Error::Invalid("HomOTL-I runs on the logistic family only".into()));
    }
    let theta_s = match scenario.source {
        SourceSpec::Exact => scenario.theta_s.clone(),
        SourceSpec::Sample { .. } => family.mle(&data.source)?.0,
        SourceSpec::None => return Err(Error::Invalid("HomOTL-I needs a source model".into())),
    };
    let bounds = family.bounds();
    let theta_t0 = match opts.init {
        HomOtlInit::Zero => vec![0.0; family.dim()],
        HomOtlInit::Uniform => {
            let mut rng = stream(seed, INIT_STREAM);
            (0..family.dim()).map(|i| bounds.lower()[i] + bounds.width(i) * rng.random::<f64>()).collect()
        }
    };
    let mut state = HomOtlState::new(theta_s, theta_t0, opts.eta, opts.variant)?;
    let mut regrets = Vec::with_capacity(data.target.len());
    let mut mistakes = Vec::with_capacity(data.target.len());
    for (k, z) in data.target.iter().enumerate() {
        let x = covariates(z)?;
        let pred = homotl_predict(&state, x);
        mistakes.push(pred.label != z.label());
        let p = if z.label() == 1 { pred.prob_one } else { 1.0 - pred.prob_one };
        if p <= 0.0 {
            return Err(Error::InfiniteRegret { step: k + 1, diagnostic: "HomOTL-I assigned zero probability to the observed label".into() });
        }
        regrets.push(family.log_density(&scenario.theta_t, z) - p.ln());
        homotl_step_in_place(&mut state, z)?;
    }
    Ok(RegretCurve::from_instantaneous(regrets, Some(mistakes), seed, start.elapsed()))
}

/// The mixture strategy over θt alone with the free marginal.
pub fn source_free_mixture(scenario: &Scenario, data: &TrialData, seed: u64) -> Result<RegretCurve> {
    crate::grid::run_source_free_with(scenario, data, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(x: Vec<f64>, y: u8) -> Observation {
        Observation::Labeled { x, y }
    }

    #[test]
    fn equal_losses_keep_weights() {
        let s = HomOtlState::new(ParamPoint::new(vec![0.3, 0.3]).unwrap(), vec![0.3, 0.3], 0.1, HomOtlVariant::CrossEntropy).unwrap();
        let n = homotl_step(&s, &obs(vec![1.0, -1.0], 1)).unwrap();
        assert!((n.w_s - 0.5).abs() < 1e-15);
        assert_eq!(n.theta_s, s.theta_s);
    }

    #[test]
    fn tie_is_label_zero() {
        let s = HomOtlState::new(ParamPoint::new(vec![0.0]).unwrap(), vec![0.0], 0.1, HomOtlVariant::CrossEntropy).unwrap();
        let p = homotl_predict(&s, &[2.0]);
        assert_eq!(p.label, 0);
        assert_eq!(p.prob_one, 0.5);
    }
}
