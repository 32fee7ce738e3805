//! Validated runtime description of one experiment and the per-trial data it generates.

use std::time::Duration;

use crate::family::{FamilySpec, Observation, ParamPoint};
use crate::loss::LossSpec;
use crate::prior::{Marginal, PriorSpec};
use crate::rng::stream;

/// Stream labels for per-trial randomness.
pub(crate) const SOURCE_STREAM: u64 = 1;
pub(crate) const TARGET_STREAM: u64 = 2;
pub(crate) const HELDOUT_STREAM: u64 = 3;
pub(crate) const EPISODE_STREAM_BASE: u64 = 100;
pub(crate) const ALGORITHM_STREAM_BASE: u64 = 1000;

/// How the source domain is presented to a learner.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    None,
    /// θs known exactly.
    Exact,
    /// `m` samples drawn from `P_θs*`.
    Sample { m: usize },
}

/// One time-variant episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub theta_t: ParamPoint,
    pub n: usize,
    /// Leading coordinates tied to θs.
    pub shared: usize,
    /// Following coordinates tied to the previous episode.
    pub common: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOptions {
    pub resolution: Option<usize>,
    pub saturation_threshold: usize,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self { resolution: None, saturation_threshold: 50_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub family: FamilySpec,
    pub theta_t: ParamPoint,
    pub theta_s: ParamPoint,
    pub prior: PriorSpec,
    /// Prior `ω̂(θt)` used without the source.
    pub free_marginal: Marginal,
    pub source: SourceSpec,
    pub n: usize,
    pub loss: LossSpec,
    pub seed: u64,
    pub grid: GridOptions,
    pub episodes: Vec<Episode>,
}

/// Source and target samples for one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialData {
    pub source: Vec<Observation>,
    pub target: Vec<Observation>,
}

impl Scenario {
    /// Draws the trial's data from independent seeded streams.
    pub fn trial_data(&self, seed: u64) -> TrialData {
        let source = match self.source {
            SourceSpec::Sample { m } => self.family.sample_n(&self.theta_s, m, &mut stream(seed, SOURCE_STREAM)),
            _ => Vec::new(),
        };
        let target = self.family.sample_n(&self.theta_t, self.n, &mut stream(seed, TARGET_STREAM));
        TrialData { source, target }
    }

    pub fn source_data(&self, seed: u64) -> Vec<Observation> {
        match self.source {
            SourceSpec::Sample { m } => self.family.sample_n(&self.theta_s, m, &mut stream(seed, SOURCE_STREAM)),
            _ => Vec::new(),
        }
    }

    /// Target samples for episode `i`; episode 0 shares the single-task stream.
    pub fn episode_data(&self, seed: u64, i: usize) -> Vec<Observation> {
        let ep = &self.episodes[i];
        let label = if i == 0 { TARGET_STREAM } else { EPISODE_STREAM_BASE + i as u64 };
        self.family.sample_n(&ep.theta_t, ep.n, &mut stream(seed, label))
    }
}

/// Realized regret of one algorithm on one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretCurve {
    pub instantaneous: Vec<f64>,
    pub cumulative: Vec<f64>,
    /// Cumulative mistake counts, when the algorithm emits labels.
    pub mistakes: Option<Vec<f64>>,
    pub seed: u64,
    pub wall_clock: Duration,
}

impl RegretCurve {
    pub fn from_instantaneous(instantaneous: Vec<f64>, mistakes: Option<Vec<bool>>, seed: u64, wall_clock: Duration) -> Self {
        let mut cumulative = Vec::with_capacity(instantaneous.len());
        let mut acc = 0.0;
        for r in &instantaneous {
            acc += r;
            cumulative.push(acc);
        }
        let mistakes = mistakes.map(|m| {
            let mut c = 0.0;
            m.iter()
                .map(|&e| {
                    if e {
                        c += 1.0;
                    }
                    c
                })
                .collect()
        });
        Self { instantaneous, cumulative, mistakes, seed, wall_clock }
    }

    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }
}
