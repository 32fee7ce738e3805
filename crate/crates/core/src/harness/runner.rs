//! Parallel Monte Carlo repeats. Trial `i` uses seed `base + i`, so results
//! do not depend on the thread count.

use std::sync::Arc;

use rayon::prelude::*;

use crate::baselines::{run_homotl_with, source_free_mixture};
use crate::bounds::{negative_floor, otl_asymptote_general, FisherBlocks};
use crate::dpm::{dpm_fit_source, run_dpm_with, SourceAtoms};
use crate::empu::run_empu_with;
use crate::error::{Error, Result};
use crate::grid::{run_otl_with, run_tvtl_with};
use crate::harness::config::{Algorithm, AlgorithmRun, Experiment};
use crate::numeric::mean_and_stderr;
use crate::prior::Conditional;
use crate::scenario::{RegretCurve, Scenario, SourceSpec};

/// Environment variable holding the default worker count.
pub const THREADS_ENV: &str = "BAYESTL_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub struct TrialFailure {
    pub trial: usize,
    pub seed: u64,
    pub diagnostic: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmResult {
    pub label: String,
    /// Completed trials in trial order.
    pub trials: Vec<RegretCurve>,
    pub failures: Vec<TrialFailure>,
    pub mean_regret: Vec<f64>,
    pub stderr: Vec<f64>,
    pub mean_mistakes: Option<Vec<f64>>,
    pub mistakes_stderr: Option<Vec<f64>>,
}

impl AlgorithmResult {
    fn summarize(label: String, steps: usize, trials: Vec<RegretCurve>, failures: Vec<TrialFailure>) -> Self {
        let column = |f: &dyn Fn(&RegretCurve) -> f64| -> (f64, f64) {
            let v: Vec<f64> = trials.iter().map(f).collect();
            mean_and_stderr(&v)
        };
        let (mean_regret, stderr): (Vec<f64>, Vec<f64>) = (0..steps).map(|k| column(&|c| c.cumulative[k])).unzip();
        let has_mistakes = !trials.is_empty() && trials.iter().all(|c| c.mistakes.is_some());
        let (mean_mistakes, mistakes_stderr) = if has_mistakes {
            let (m, s): (Vec<f64>, Vec<f64>) = (0..steps).map(|k| column(&|c| c.mistakes.as_ref().expect("checked")[k])).unzip();
            (Some(m), Some(s))
        } else {
            (None, None)
        };
        Self { label, trials, failures, mean_regret, stderr, mean_mistakes, mistakes_stderr }
    }

    pub fn complete(&self) -> bool {
        self.failures.is_empty()
    }

    /// Per-trial cumulative regret at step `k` (1-based).
    pub fn totals_at(&self, k: usize) -> Vec<f64> {
        self.trials.iter().map(|c| c.cumulative[k - 1]).collect()
    }

    /// Per-trial cumulative mistakes at step `k` (1-based).
    pub fn mistakes_at(&self, k: usize) -> Vec<f64> {
        self.trials.iter().filter_map(|c| c.mistakes.as_ref().map(|m| m[k - 1])).collect()
    }

    /// Mean wall-clock seconds per completed trial.
    pub fn mean_seconds(&self) -> f64 {
        self.trials.iter().map(|c| c.wall_clock.as_secs_f64()).sum::<f64>() / self.trials.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub scenario: String,
    pub steps: usize,
    pub algorithms: Vec<AlgorithmResult>,
    pub bound_overlay: Option<Vec<f64>>,
}

impl ScenarioResult {
    pub fn complete(&self) -> bool {
        self.algorithms.iter().all(AlgorithmResult::complete)
    }

    pub fn algorithm(&self, label: &str) -> Option<&AlgorithmResult> {
        self.algorithms.iter().find(|a| a.label == label)
    }
}

/// Worker count: explicit value, then the environment, then rayon's default.
pub fn resolve_threads(explicit: Option<usize>) -> Option<usize> {
    explicit.or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok())).filter(|t| *t > 0)
}

enum Prepared {
    Plain,
    Dpm(Arc<SourceAtoms>),
}

fn prepare(scenario: &Scenario, run: &AlgorithmRun) -> Result<Prepared> {
    match &run.algorithm {
        Algorithm::Dpm(opts) => {
            let data = scenario.source_data(scenario.seed);
            Ok(Prepared::Dpm(Arc::new(dpm_fit_source(&scenario.family, &data, opts, scenario.seed)?)))
        }
        _ => Ok(Prepared::Plain),
    }
}

fn run_trial(scenario: &Scenario, run: &AlgorithmRun, prepared: &Prepared, seed: u64) -> Result<RegretCurve> {
    if !scenario.episodes.is_empty() {
        let source = scenario.source_data(seed);
        let episodes: Vec<_> = (0..scenario.episodes.len()).map(|i| scenario.episode_data(seed, i)).collect();
        let curves = run_tvtl_with(scenario, &source, &episodes, seed)?;
        let mut inst = Vec::new();
        let mut mistakes = Vec::new();
        let mut wall = std::time::Duration::ZERO;
        for c in curves {
            inst.extend_from_slice(&c.instantaneous);
            let mut prev = 0.0;
            for m in c.mistakes.unwrap_or_default() {
                mistakes.push(m > prev);
                prev = m;
            }
            wall += c.wall_clock;
        }
        return Ok(RegretCurve::from_instantaneous(inst, Some(mistakes), seed, wall));
    }
    let data = scenario.trial_data(seed);
    match (&run.algorithm, prepared) {
        (Algorithm::Grid, _) => run_otl_with(scenario, &data, seed),
        (Algorithm::SourceFree, _) => source_free_mixture(scenario, &data, seed),
        (Algorithm::Empu(o), _) => run_empu_with(scenario, &data, seed, o),
        (Algorithm::HomOtl(o), _) => run_homotl_with(scenario, &data, seed, o),
        (Algorithm::Dpm(o), Prepared::Dpm(src)) => run_dpm_with(scenario, src.clone(), &data, seed, o),
        (Algorithm::Dpm(_), Prepared::Plain) => Err(Error::Invalid("DPM source fit missing".into())),
    }
}

fn run_algorithm(exp: &Experiment, run: &AlgorithmRun) -> AlgorithmResult {
    let scenario = &exp.scenario;
    let steps = exp.steps();
    let prepared = match prepare(scenario, run) {
        Ok(p) => p,
        Err(e) => {
            let failures = (0..exp.repeats)
                .map(|i| TrialFailure { trial: i, seed: scenario.seed.wrapping_add(i as u64), diagnostic: e.to_string() })
                .collect();
            return AlgorithmResult::summarize(run.label.clone(), steps, Vec::new(), failures);
        }
    };
    let outcomes: Vec<Result<RegretCurve>> = (0..exp.repeats)
        .into_par_iter()
        .map(|i| run_trial(scenario, run, &prepared, scenario.seed.wrapping_add(i as u64)))
        .collect();
    let mut trials = Vec::new();
    let mut failures = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(c) => trials.push(c),
            Err(e) => failures.push(TrialFailure { trial: i, seed: scenario.seed.wrapping_add(i as u64), diagnostic: e.to_string() }),
        }
    }
    AlgorithmResult::summarize(run.label.clone(), steps, trials, failures)
}

/// Runs every algorithm of the experiment. Trial aborts are recorded per trial.
pub fn run_scenario(exp: &Experiment, threads: Option<usize>) -> Result<ScenarioResult> {
    let body = || -> Result<ScenarioResult> {
        let algorithms = exp.algorithms.iter().map(|run| run_algorithm(exp, run)).collect();
        let bound_overlay = if exp.bound_overlay { Some(bound_overlay(&exp.scenario, exp.steps())?) } else { None };
        Ok(ScenarioResult { scenario: exp.scenario.name.clone(), steps: exp.steps(), algorithms, bound_overlay })
    };
    match resolve_threads(threads) {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build().map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
            pool.install(body)
        }
        None => body(),
    }
}

/// Parameter the prior forces θt onto when its density vanishes at the truth.
fn nearest_supported(scenario: &Scenario) -> Option<Vec<f64>> {
    let s = &scenario.theta_s;
    let b = scenario.family.bounds();
    match scenario.prior.conditional() {
        Conditional::Delta => Some(s.to_vec()),
        Conditional::BoxConditional(c) => Some(
            scenario
                .theta_t
                .iter()
                .enumerate()
                .map(|(i, t)| t.clamp((s[i] - c).max(b.lower()[i]), (s[i] + c).min(b.upper()[i])))
                .collect(),
        ),
        _ => None,
    }
}

/// Prior density at the truth seen by the learner: `ω(θt* | θs*)` with a
/// source, the free marginal without one.
pub fn prior_density_at_truth(scenario: &Scenario) -> Result<f64> {
    let t = &scenario.theta_t;
    match scenario.source {
        SourceSpec::None => {
            let free = crate::prior::PriorSpec::new(scenario.family.bounds().clone(), scenario.free_marginal, Conditional::UniformBox)?;
            Ok(free.marginal_density(t))
        }
        _ if scenario.prior.is_atomic() => Ok(if t.coords() == scenario.theta_s.coords() { f64::INFINITY } else { 0.0 }),
        _ => scenario.prior.conditional_density(t, &scenario.theta_s),
    }
}

/// Asymptotic regret per step from the bounds module: the general asymptote
/// when the prior is positive at the truth, else `k · KL` to the nearest
/// supported parameter.
pub fn bound_overlay(scenario: &Scenario, steps: usize) -> Result<Vec<f64>> {
    let family = &scenario.family;
    let d = family.dim();
    let density = prior_density_at_truth(scenario)?;
    if density > 0.0 && density.is_finite() {
        let fisher = family.fisher_information(&scenario.theta_t)?;
        let blocks = FisherBlocks::from_matrices(&fisher, &fisher, 0)?;
        let m = match scenario.source {
            SourceSpec::Sample { m } => m as f64,
            _ => f64::INFINITY,
        };
        return (1..=steps).map(|k| Ok(otl_asymptote_general(k as f64, m, &blocks, d, 0, density)?.total)).collect();
    }
    let kl = match nearest_supported(scenario) {
        Some(p) if density == 0.0 => family.kl_divergence(&scenario.theta_t, &p),
        _ if density.is_infinite() => 0.0,
        _ => f64::NAN,
    };
    (1..=steps).map(|k| if kl.is_nan() { Ok(f64::NAN) } else { negative_floor(k as f64, kl) }).collect()
}
