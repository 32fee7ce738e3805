//! Dirichlet-process mixture transfer. Source atoms are fitted once and then
//! frozen; target atoms are resampled by Gibbs sweeps in which each target
//! point may join a target cluster, adopt a source atom (weight `βα`) or open
//! a fresh cluster from the base measure (weight `(1 - β)α`).
//!
//! The base measure is a Gaussian over the parameter vector restricted to the
//! family's box. Base integrals use a fixed set of cached draws, which also
//! serve as the importance sample for fresh-cluster values. Fresh clusters get
//! a few random-walk Metropolis moves per sweep.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::family::{FamilySpec, Observation, ParamPoint};
use crate::numeric::{logsumexp, truncated_norm_from_uniform};
use crate::rng::stream;
use crate::scenario::{RegretCurve, Scenario, TrialData, ALGORITHM_STREAM_BASE};

const BASE_STREAM: u64 = ALGORITHM_STREAM_BASE + 30;
const GIBBS_STREAM: u64 = ALGORITHM_STREAM_BASE + 31;
const SOURCE_FIT_STREAM: u64 = ALGORITHM_STREAM_BASE + 32;

/// Gaussian base measure `G0` restricted to the parameter box.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseMeasure {
    pub mean: Vec<f64>,
    pub scale: f64,
}

impl BaseMeasure {
    pub fn standard(d: usize) -> Self {
        Self { mean: vec![0.0; d], scale: 1.0 }
    }

    fn sample<R: Rng + ?Sized>(&self, family: &FamilySpec, rng: &mut R) -> ParamPoint {
        let b = family.bounds();
        let coords = (0..family.dim())
            .map(|i| {
                let lo = (b.lower()[i] - self.mean[i]) / self.scale;
                let hi = (b.upper()[i] - self.mean[i]) / self.scale;
                let v = self.mean[i] + self.scale * truncated_norm_from_uniform(lo, hi, rng.random::<f64>());
                v.clamp(b.lower()[i], b.upper()[i])
            })
            .collect();
        ParamPoint::new(coords).expect("base draw is finite")
    }

    /// Unnormalized log density; `-∞` outside the box.
    fn log_density(&self, family: &FamilySpec, theta: &[f64]) -> f64 {
        if !family.bounds().contains(theta) {
            return f64::NEG_INFINITY;
        }
        theta.iter().zip(&self.mean).map(|(t, m)| -0.5 * ((t - m) / self.scale).powi(2)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpmOptions {
    pub alpha: f64,
    pub beta: f64,
    pub base: BaseMeasure,
    /// Atoms averaged by the predictive.
    pub predictive_samples: usize,
    pub sweeps: usize,
    pub base_draws: usize,
    pub mh_steps: usize,
    pub mh_scale: f64,
}

impl DpmOptions {
    pub fn new(d: usize, alpha: f64, beta: f64) -> Self {
        Self { alpha, beta, base: BaseMeasure::standard(d), predictive_samples: 20, sweeps: 20, base_draws: 512, mh_steps: 5, mh_scale: 0.1 }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Invalid(format!("concentration must be positive, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Invalid(format!("balance must lie in [0, 1], got {}", self.beta)));
        }
        if self.base.mean.len() != d || !(self.base.scale > 0.0) {
            return Err(Error::Invalid("base measure needs a mean of the family dimension and a positive scale".into()));
        }
        if self.predictive_samples == 0 || self.base_draws == 0 {
            return Err(Error::Invalid("predictive and base sample counts must be positive".into()));
        }
        Ok(())
    }
}

/// Frozen source clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceAtoms {
    pub values: Vec<ParamPoint>,
    pub counts: Vec<usize>,
}

impl SourceAtoms {
    pub fn empty() -> Self {
        Self { values: Vec::new(), counts: Vec::new() }
    }

    /// One atom per source sample.
    pub fn per_sample(&self) -> Vec<ParamPoint> {
        self.values.iter().zip(&self.counts).flat_map(|(v, &c)| std::iter::repeat_n(v.clone(), c)).collect()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Cluster {
    value: ParamPoint,
    count: usize,
    /// Index of the source cluster this value was adopted from.
    origin: Option<usize>,
}

/// Normalized conditional weights for one target point, grouped by cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalWeights {
    pub target: Vec<f64>,
    pub source: Vec<f64>,
    pub fresh: f64,
}

impl ConditionalWeights {
    pub fn total(&self) -> f64 {
        self.target.iter().sum::<f64>() + self.source.iter().sum::<f64>() + self.fresh
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpmState {
    family: FamilySpec,
    opts: DpmOptions,
    source: Arc<SourceAtoms>,
    base: Vec<ParamPoint>,
    data: Vec<Observation>,
    /// `log P_g(z_i)` at every cached base draw.
    base_loglik: Vec<Vec<f64>>,
    /// `log mean_g P_g(z_i)`.
    base_logmarg: Vec<f64>,
    assign: Vec<usize>,
    clusters: Vec<Cluster>,
}

enum Choice {
    Target(usize),
    Source(usize),
    Fresh,
}

fn pick<R: Rng + ?Sized>(log_w: &[f64], rng: &mut R) -> usize {
    let z = logsumexp(log_w);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, lw) in log_w.iter().enumerate() {
        let w = (lw - z).exp();
        if w > 0.0 {
            last = i;
        }
        acc += w;
        if u < acc {
            return i;
        }
    }
    last
}

impl DpmState {
    pub fn new<R: Rng + ?Sized>(family: FamilySpec, opts: DpmOptions, source: Arc<SourceAtoms>, rng: &mut R) -> Result<Self> {
        opts.validate(family.dim())?;
        let base = (0..opts.base_draws).map(|_| opts.base.sample(&family, rng)).collect();
        Ok(Self { family, opts, source, base, data: Vec::new(), base_loglik: Vec::new(), base_logmarg: Vec::new(), assign: Vec::new(), clusters: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn options(&self) -> &DpmOptions {
        &self.opts
    }

    pub fn source(&self) -> &SourceAtoms {
        &self.source
    }

    /// Current atom of every target point.
    pub fn atoms(&self) -> Vec<ParamPoint> {
        self.assign.iter().map(|&c| self.clusters[c].value.clone()).collect()
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }

    fn log_weights(&self, i: usize) -> (Vec<f64>, Vec<f64>, f64) {
        let z = &self.data[i];
        let own = self.assign.get(i).copied();
        let target = self
            .clusters
            .iter()
            .enumerate()
            .map(|(c, cl)| {
                let count = cl.count - usize::from(own == Some(c));
                if count == 0 {
                    f64::NEG_INFINITY
                } else {
                    (count as f64).ln() + self.family.log_density(&cl.value, z)
                }
            })
            .collect();
        let ba = (self.opts.beta * self.opts.alpha).ln();
        let source = self
            .source
            .values
            .iter()
            .zip(&self.source.counts)
            .map(|(v, &n)| ba + (n as f64).ln() + self.family.log_density(v, z))
            .collect();
        let fresh = ((1.0 - self.opts.beta) * self.opts.alpha).ln() + self.base_logmarg[i];
        (target, source, fresh)
    }

    /// Conditional weights of point `i` given every other point's atom.
    pub fn conditional_weights(&self, i: usize) -> Result<ConditionalWeights> {
        let (t, s, f) = self.log_weights(i);
        let all: Vec<f64> = t.iter().chain(&s).copied().chain(std::iter::once(f)).collect();
        let z = logsumexp(&all);
        if !z.is_finite() {
            return Err(Error::ObservationImpossible);
        }
        Ok(ConditionalWeights {
            target: t.iter().map(|w| (w - z).exp()).collect(),
            source: s.iter().map(|w| (w - z).exp()).collect(),
            fresh: (f - z).exp(),
        })
    }

    fn choose<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> Result<Choice> {
        let (t, s, f) = self.log_weights(i);
        let (nt, ns) = (t.len(), s.len());
        let all: Vec<f64> = t.into_iter().chain(s).chain(std::iter::once(f)).collect();
        if !logsumexp(&all).is_finite() {
            return Err(Error::ObservationImpossible);
        }
        let k = pick(&all, rng);
        Ok(if k < nt {
            Choice::Target(k)
        } else if k < nt + ns {
            Choice::Source(k - nt)
        } else {
            Choice::Fresh
        })
    }

    fn detach(&mut self, i: usize) {
        let c = self.assign[i];
        self.clusters[c].count -= 1;
        if self.clusters[c].count == 0 {
            let last = self.clusters.len() - 1;
            self.clusters.swap_remove(c);
            if c != last {
                for a in self.assign.iter_mut() {
                    if *a == last {
                        *a = c;
                    }
                }
            }
        }
    }

    fn attach<R: Rng + ?Sized>(&mut self, i: usize, choice: Choice, rng: &mut R) -> usize {
        match choice {
            Choice::Target(c) => {
                self.clusters[c].count += 1;
                c
            }
            Choice::Source(s) => {
                if let Some(c) = self.clusters.iter().position(|cl| cl.origin == Some(s)) {
                    self.clusters[c].count += 1;
                    c
                } else {
                    self.clusters.push(Cluster { value: self.source.values[s].clone(), count: 1, origin: Some(s) });
                    self.clusters.len() - 1
                }
            }
            Choice::Fresh => {
                let g = pick(&self.base_loglik[i], rng);
                self.clusters.push(Cluster { value: self.base[g].clone(), count: 1, origin: None });
                self.clusters.len() - 1
            }
        }
    }

    /// Adds an observation, drawing its atom from the conditional.
    pub fn push<R: Rng + ?Sized>(&mut self, z: Observation, rng: &mut R) -> Result<()> {
        let ll: Vec<f64> = self.base.iter().map(|g| self.family.log_density(g, &z)).collect();
        let marg = logsumexp(&ll) - (ll.len() as f64).ln();
        self.data.push(z);
        self.base_loglik.push(ll);
        self.base_logmarg.push(marg);
        let i = self.data.len() - 1;
        let choice = match self.choose(i, rng) {
            Ok(c) => c,
            Err(e) => {
                self.data.pop();
                self.base_loglik.pop();
                self.base_logmarg.pop();
                return Err(e);
            }
        };
        let c = self.attach(i, choice, rng);
        self.assign.push(c);
        Ok(())
    }

    /// Resamples every target atom once, then refreshes fresh clusters.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        for i in 0..self.data.len() {
            let choice = self.choose(i, rng)?;
            let c = match choice {
                Choice::Target(c) if c == self.assign[i] => continue,
                other => other,
            };
            // Detaching may relabel the chosen cluster.
            let old = self.assign[i];
            let last = self.clusters.len() - 1;
            let emptied = self.clusters[old].count == 1;
            self.detach(i);
            let c = match c {
                Choice::Target(t) if emptied && t == last => Choice::Target(old),
                other => other,
            };
            self.assign[i] = self.attach(i, c, rng);
        }
        self.refresh(rng);
        Ok(())
    }

    fn refresh<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        if self.opts.mh_steps == 0 {
            return;
        }
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); self.clusters.len()];
        for (i, &c) in self.assign.iter().enumerate() {
            members[c].push(i);
        }
        for (c, idx) in members.iter().enumerate() {
            if self.clusters[c].origin.is_some() {
                continue;
            }
            let target = |theta: &[f64]| -> f64 {
                let prior = self.opts.base.log_density(&self.family, theta);
                if prior == f64::NEG_INFINITY {
                    return prior;
                }
                prior + idx.iter().map(|&i| self.family.log_density(theta, &self.data[i])).sum::<f64>()
            };
            let mut cur = self.clusters[c].value.clone();
            let mut cur_lp = target(&cur);
            for _ in 0..self.opts.mh_steps {
                let prop: Vec<f64> = cur.iter().map(|v| v + self.opts.mh_scale * rng.sample::<f64, _>(StandardNormal)).collect();
                let lp = target(&prop);
                let u: f64 = rng.random();
                if lp > f64::NEG_INFINITY && u.ln() < lp - cur_lp {
                    cur = ParamPoint::new(prop).expect("finite proposal");
                    cur_lp = lp;
                }
            }
            self.clusters[c].value = cur;
        }
    }

    /// Draws one atom for a new point from the urn, ignoring its label.
    fn predictive_atom<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamPoint {
        let mut log_w: Vec<f64> = self.clusters.iter().map(|c| (c.count as f64).ln()).collect();
        let ba = (self.opts.beta * self.opts.alpha).ln();
        log_w.extend(self.source.counts.iter().map(|&n| ba + (n as f64).ln()));
        log_w.push(((1.0 - self.opts.beta) * self.opts.alpha).ln());
        let k = pick(&log_w, rng);
        let nt = self.clusters.len();
        if k < nt {
            self.clusters[k].value.clone()
        } else if k < nt + self.source.values.len() {
            self.source.values[k - nt].clone()
        } else {
            self.base[rng.random_range(0..self.base.len())].clone()
        }
    }

    /// `(1/K) Σ P_θk(z)` over `K` predictive atoms; returns `(P(y = 1), log P(z))`.
    pub fn predict<R: Rng + ?Sized>(&self, z: &Observation, rng: &mut R) -> (f64, f64) {
        let k = self.opts.predictive_samples;
        let atoms: Vec<ParamPoint> = (0..k).map(|_| self.predictive_atom(rng)).collect();
        let p1 = atoms.iter().map(|a| self.family.prob_one(a, z)).sum::<f64>() / k as f64;
        let lz: Vec<f64> = atoms.iter().map(|a| self.family.log_density(a, z)).collect();
        (p1, logsumexp(&lz) - (k as f64).ln())
    }

    /// Frozen cluster summary of the current state.
    pub fn to_source_atoms(&self) -> SourceAtoms {
        SourceAtoms { values: self.clusters.iter().map(|c| c.value.clone()).collect(), counts: self.clusters.iter().map(|c| c.count).collect() }
    }
}

/// Fits the source DPM: sequential insertion followed by `sweeps` Gibbs sweeps.
pub fn dpm_fit_source(family: &FamilySpec, data: &[Observation], opts: &DpmOptions, seed: u64) -> Result<SourceAtoms> {
    if opts.sweeps == 0 {
        return Err(Error::Invalid("source fit needs at least one sweep".into()));
    }
    let mut fit_opts = opts.clone();
    fit_opts.beta = 0.0;
    let mut rng = stream(seed, SOURCE_FIT_STREAM);
    let mut state = DpmState::new(family.clone(), fit_opts, Arc::new(SourceAtoms::empty()), &mut rng)?;
    for z in data {
        state.push(z.clone(), &mut rng)?;
    }
    for _ in 0..opts.sweeps {
        state.sweep(&mut rng)?;
    }
    Ok(state.to_source_atoms())
}

/// Online DPM transfer for one trial: predict, observe, then sweep the full history.
pub fn run_dpm_with(scenario: &Scenario, source: Arc<SourceAtoms>, data: &TrialData, seed: u64, opts: &DpmOptions) -> Result<RegretCurve> {
    let start = Instant::now();
    let family = &scenario.family;
    let mut base_rng = stream(seed, BASE_STREAM);
    let mut rng = stream(seed, GIBBS_STREAM);
    let mut state = DpmState::new(family.clone(), opts.clone(), source, &mut base_rng)?;
    let mut regrets = Vec::with_capacity(data.target.len());
    let mut mistakes = Vec::with_capacity(data.target.len());
    for (k, z) in data.target.iter().enumerate() {
        let (p1, lp) = state.predict(z, &mut rng);
        if lp == f64::NEG_INFINITY {
            return Err(Error::InfiniteRegret { step: k + 1, diagnostic: "DPM predictive density is zero at the observed outcome".into() });
        }
        mistakes.push(u8::from(p1 > 0.5) != z.label());
        regrets.push(family.log_density(&scenario.theta_t, z) - lp);
        state.push(z.clone(), &mut rng)?;
        for _ in 0..opts.sweeps {
            state.sweep(&mut rng)?;
        }
    }
    Ok(RegretCurve::from_instantaneous(regrets, Some(mistakes), seed, start.elapsed()))
}
