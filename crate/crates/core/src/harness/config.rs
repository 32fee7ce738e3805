//! TOML scenario files. Unknown keys are rejected and every violation found
//! during validation is reported at once.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::dpm::{BaseMeasure, DpmOptions};
use crate::empu::{EmpuOptions, PredictMode};
use crate::baselines::{HomOtlInit, HomOtlOptions, HomOtlVariant};
use crate::error::{Error, Result};
use crate::family::{CovariateModel, FamilyKind, FamilySpec, ParamBox, ParamPoint};
use crate::loss::{LossKind, LossSpec};
use crate::prior::{Conditional, GridDensity, Kernel, Marginal, PriorSpec, TvtlConditional};
use crate::scenario::{Episode, GridOptions, Scenario, SourceSpec};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub family: FamilyConfig,
    pub theta_t: Vec<f64>,
    pub theta_s: Vec<f64>,
    #[serde(default)]
    pub source: SourceConfig,
    pub prior: PriorConfig,
    pub n: i64,
    #[serde(default)]
    pub loss: LossConfig,
    pub algorithms: Vec<AlgorithmConfig>,
    pub repeats: i64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub bound_overlay: bool,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub empu: EmpuConfig,
    #[serde(default)]
    pub homotl: HomOtlConfig,
    #[serde(default)]
    pub dpm: DpmConfig,
    #[serde(default)]
    pub episodes: Vec<EpisodeConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub kind: String,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub covariate_mean: Option<Vec<f64>>,
    pub covariate_std: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    #[serde(default = "default_source_mode")]
    pub mode: String,
    pub m: Option<i64>,
}

fn default_source_mode() -> String {
    "exact".into()
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self { mode: default_source_mode(), m: None }
    }
}

/// A scale given once for every coordinate or per coordinate.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Scale {
    One(f64),
    Each(Vec<f64>),
}

impl Scale {
    fn expand(&self, d: usize) -> Vec<f64> {
        match self {
            Scale::One(c) => vec![*c; d],
            Scale::Each(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    #[serde(default = "default_marginal")]
    pub marginal: String,
    pub conditional: String,
    pub c: Option<Scale>,
    pub grid_file: Option<PathBuf>,
    #[serde(default = "default_marginal")]
    pub free_marginal: String,
    pub tvtl_kernel: Option<String>,
    pub tvtl_c: Option<f64>,
}

fn default_marginal() -> String {
    "uniform".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default = "default_loss")]
    pub kind: String,
    pub bound: Option<f64>,
}

fn default_loss() -> String {
    "log".into()
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { kind: default_loss(), bound: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub resolution: Option<i64>,
    #[serde(default = "default_saturation")]
    pub saturation_threshold: i64,
}

fn default_saturation() -> i64 {
    50_000
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { resolution: None, saturation_threshold: default_saturation() }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmpuConfig {
    pub particles: Option<i64>,
    pub eta: Option<f64>,
    pub mode: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomOtlConfig {
    pub eta: Option<f64>,
    pub variant: Option<String>,
    pub init: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpmConfig {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub predictive_samples: Option<i64>,
    pub sweeps: Option<i64>,
    pub base_mean: Option<Vec<f64>>,
    pub base_scale: Option<f64>,
    pub base_draws: Option<i64>,
    pub mh_steps: Option<i64>,
    pub mh_scale: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    pub theta_t: Vec<f64>,
    pub n: i64,
    #[serde(default)]
    pub shared: usize,
    #[serde(default)]
    pub common: usize,
}

/// An algorithm by name, or a table overriding the scenario-level hyperparameters.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum AlgorithmConfig {
    Name(String),
    Table(AlgorithmTable),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmTable {
    pub kind: String,
    pub label: Option<String>,
    pub particles: Option<i64>,
    pub eta: Option<f64>,
    pub mode: Option<String>,
    pub variant: Option<String>,
    pub init: Option<String>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub predictive_samples: Option<i64>,
    pub sweeps: Option<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Algorithm {
    Grid,
    SourceFree,
    Empu(EmpuOptions),
    HomOtl(HomOtlOptions),
    Dpm(DpmOptions),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmRun {
    pub label: String,
    pub algorithm: Algorithm,
}

/// A validated, runnable scenario file.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub scenario: Scenario,
    pub repeats: usize,
    pub algorithms: Vec<AlgorithmRun>,
    pub bound_overlay: bool,
}

impl Experiment {
    /// Target steps per trial (summed over episodes when present).
    pub fn steps(&self) -> usize {
        if self.scenario.episodes.is_empty() {
            self.scenario.n
        } else {
            self.scenario.episodes.iter().map(|e| e.n).sum()
        }
    }
}

pub fn load_config(path: &Path) -> Result<Experiment> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    parse_config(&text, path.parent())
}

/// Parses and validates a scenario; relative file references resolve against `base_dir`.
pub fn parse_config(text: &str, base_dir: Option<&Path>) -> Result<Experiment> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_string()]))?;
    cfg.validate(base_dir)
}

struct Issues(Vec<String>);

impl Issues {
    fn push(&mut self, msg: impl Into<String>) {
        self.0.push(msg.into());
    }

    fn count(&mut self, field: &str, v: i64, min: i64) -> usize {
        if v < min {
            self.push(format!("{field}: must be at least {min}, got {v}"));
            min.max(0) as usize
        } else {
            v as usize
        }
    }

    fn positive(&mut self, field: &str, v: f64) -> f64 {
        if !(v.is_finite() && v > 0.0) {
            self.push(format!("{field}: must be positive, got {v}"));
        }
        v
    }
}

fn parse_marginal(s: &str) -> Option<Marginal> {
    match s {
        "uniform" => Some(Marginal::UniformBox),
        "linear-plus-half" => Some(Marginal::LinearPlusHalf),
        _ => None,
    }
}

fn parse_mode(s: &str) -> Option<PredictMode> {
    match s {
        "mixture" => Some(PredictMode::Mixture),
        "sample" => Some(PredictMode::Sample),
        _ => None,
    }
}

fn parse_variant(s: &str) -> Option<HomOtlVariant> {
    match s {
        "cross-entropy" => Some(HomOtlVariant::CrossEntropy),
        "hinge-squared" => Some(HomOtlVariant::HingeSquared),
        _ => None,
    }
}

fn parse_init(s: &str) -> Option<HomOtlInit> {
    match s {
        "zero" => Some(HomOtlInit::Zero),
        "uniform" => Some(HomOtlInit::Uniform),
        _ => None,
    }
}

fn parse_kernel(kind: &str, c: f64) -> Option<Kernel> {
    match kind {
        "box" => Some(Kernel::Box(c)),
        "gaussian" => Some(Kernel::Gaussian(c)),
        _ => None,
    }
}

impl ScenarioConfig {
    fn family(&self, iss: &mut Issues) -> Option<FamilySpec> {
        let kind = match self.family.kind.as_str() {
            "bernoulli" => FamilyKind::Bernoulli,
            "logistic" => FamilyKind::Logistic,
            other => {
                iss.push(format!("family.kind: unknown family {other:?} (expected bernoulli or logistic)"));
                return None;
            }
        };
        let d = match kind {
            FamilyKind::Bernoulli => 1,
            FamilyKind::Logistic => self.theta_t.len().max(1),
        };
        let lower = self.family.lower.clone().unwrap_or_else(|| vec![0.0; d]);
        let upper = self.family.upper.clone().unwrap_or_else(|| vec![1.0; d]);
        let bounds = match ParamBox::new(lower, upper) {
            Ok(b) => b,
            Err(e) => {
                iss.push(format!("family.lower/upper: {e}"));
                return None;
            }
        };
        let built = match kind {
            FamilyKind::Bernoulli => {
                if bounds.dim() != 1 {
                    iss.push("family: Bernoulli parameters are scalar");
                    return None;
                }
                FamilySpec::bernoulli_on(bounds.lower()[0], bounds.upper()[0])
            }
            FamilyKind::Logistic => {
                let mean = self.family.covariate_mean.clone().unwrap_or_else(|| if d == 2 { vec![5.0, -5.0] } else { vec![0.0; d] });
                let std = self.family.covariate_std.clone().unwrap_or_else(|| vec![1.0; d]);
                FamilySpec::logistic(bounds, CovariateModel { mean, std })
            }
        };
        built.map_err(|e| iss.push(format!("family: {e}"))).ok()
    }

    fn point(&self, family: &FamilySpec, field: &str, coords: &[f64], iss: &mut Issues) -> Option<ParamPoint> {
        match family.point(coords.to_vec()) {
            Ok(p) => Some(p),
            Err(e) => {
                iss.push(format!("{field}: {e}"));
                None
            }
        }
    }

    fn prior(&self, family: &FamilySpec, base_dir: Option<&Path>, iss: &mut Issues) -> Option<PriorSpec> {
        let d = family.dim();
        let marginal = parse_marginal(&self.prior.marginal).or_else(|| {
            iss.push(format!("prior.marginal: unknown marginal {:?}", self.prior.marginal));
            None
        })?;
        let need_c = |iss: &mut Issues| -> Option<Vec<f64>> {
            match &self.prior.c {
                Some(c) => Some(c.expand(d)),
                None => {
                    iss.push(format!("prior.c: required for the {} conditional", self.prior.conditional));
                    None
                }
            }
        };
        let conditional = match self.prior.conditional.as_str() {
            "uniform" => Conditional::UniformBox,
            "sum-linear" => Conditional::SumLinear,
            "delta" => Conditional::Delta,
            "box" => {
                let c = need_c(iss)?;
                if c.iter().any(|v| *v != c[0]) {
                    iss.push("prior.c: the box conditional takes one half-width");
                }
                Conditional::BoxConditional(c[0])
            }
            "gaussian" => Conditional::GaussianConditional(need_c(iss)?),
            "grid" => {
                let Some(file) = &self.prior.grid_file else {
                    iss.push("prior.grid_file: required for the grid conditional");
                    return None;
                };
                let path = match base_dir {
                    Some(dir) if file.is_relative() => dir.join(file),
                    _ => file.clone(),
                };
                match GridDensity::load(&path) {
                    Ok(g) => Conditional::GridDensity(g),
                    Err(e) => {
                        iss.push(format!("prior.grid_file: {e}"));
                        return None;
                    }
                }
            }
            other => {
                iss.push(format!("prior.conditional: unknown conditional {other:?}"));
                return None;
            }
        };
        let mut prior = match PriorSpec::new(family.bounds().clone(), marginal, conditional) {
            Ok(p) => p,
            Err(e) => {
                iss.push(format!("prior: {e}"));
                return None;
            }
        };
        if let Some(kind) = &self.prior.tvtl_kernel {
            let c = self.prior.tvtl_c.unwrap_or(f64::NAN);
            match parse_kernel(kind, c) {
                Some(k) => match prior.clone().with_tvtl(TvtlConditional { kernel: k }) {
                    Ok(p) => prior = p,
                    Err(e) => iss.push(format!("prior.tvtl_c: {e}")),
                },
                None => iss.push(format!("prior.tvtl_kernel: unknown kernel {kind:?}")),
            }
        }
        Some(prior)
    }

    fn algorithms(&self, d: usize, iss: &mut Issues) -> Vec<AlgorithmRun> {
        let mut runs = Vec::new();
        if self.algorithms.is_empty() {
            iss.push("algorithms: at least one algorithm is required");
        }
        for (i, a) in self.algorithms.iter().enumerate() {
            let table = match a {
                AlgorithmConfig::Name(name) => AlgorithmTable {
                    kind: name.clone(),
                    label: None,
                    particles: None,
                    eta: None,
                    mode: None,
                    variant: None,
                    init: None,
                    alpha: None,
                    beta: None,
                    predictive_samples: None,
                    sweeps: None,
                },
                AlgorithmConfig::Table(t) => t.clone(),
            };
            let field = format!("algorithms[{i}]");
            let algorithm = match table.kind.as_str() {
                "grid" => Algorithm::Grid,
                "source-free" => Algorithm::SourceFree,
                "empu" => {
                    let mut o = EmpuOptions::default();
                    if let Some(p) = table.particles.or(self.empu.particles) {
                        o.particles = iss.count(&format!("{field}.particles"), p, 1);
                    }
                    o.eta = table.eta.or(self.empu.eta).unwrap_or(o.eta);
                    if !(o.eta.is_finite() && o.eta >= 0.0) {
                        iss.push(format!("{field}.eta: must be nonnegative, got {}", o.eta));
                    }
                    if let Some(m) = table.mode.as_ref().or(self.empu.mode.as_ref()) {
                        match parse_mode(m) {
                            Some(m) => o.mode = m,
                            None => iss.push(format!("{field}.mode: unknown prediction mode {m:?}")),
                        }
                    }
                    Algorithm::Empu(o)
                }
                "homotl" => {
                    let mut o = HomOtlOptions::default();
                    o.eta = table.eta.or(self.homotl.eta).unwrap_or(o.eta);
                    if !(o.eta.is_finite() && o.eta >= 0.0) {
                        iss.push(format!("{field}.eta: must be nonnegative, got {}", o.eta));
                    }
                    if let Some(v) = table.variant.as_ref().or(self.homotl.variant.as_ref()) {
                        match parse_variant(v) {
                            Some(v) => o.variant = v,
                            None => iss.push(format!("{field}.variant: unknown HomOTL variant {v:?}")),
                        }
                    }
                    if let Some(v) = table.init.as_ref().or(self.homotl.init.as_ref()) {
                        match parse_init(v) {
                            Some(v) => o.init = v,
                            None => iss.push(format!("{field}.init: unknown initialization {v:?}")),
                        }
                    }
                    if self.family.kind != "logistic" {
                        iss.push(format!("{field}: homotl needs the logistic family"));
                    }
                    Algorithm::HomOtl(o)
                }
                "dpm" => {
                    let alpha = table.alpha.or(self.dpm.alpha).unwrap_or(0.01);
                    let beta = table.beta.or(self.dpm.beta).unwrap_or(0.5);
                    let mut o = DpmOptions::new(d, alpha, beta);
                    if let Some(k) = table.predictive_samples.or(self.dpm.predictive_samples) {
                        o.predictive_samples = iss.count(&format!("{field}.predictive_samples"), k, 1);
                    }
                    if let Some(s) = table.sweeps.or(self.dpm.sweeps) {
                        o.sweeps = iss.count(&format!("{field}.sweeps"), s, 1);
                    }
                    if let Some(b) = self.dpm.base_draws {
                        o.base_draws = iss.count("dpm.base_draws", b, 1);
                    }
                    if let Some(s) = self.dpm.mh_steps {
                        o.mh_steps = iss.count("dpm.mh_steps", s, 0);
                    }
                    if let Some(s) = self.dpm.mh_scale {
                        o.mh_scale = iss.positive("dpm.mh_scale", s);
                    }
                    o.base = BaseMeasure {
                        mean: self.dpm.base_mean.clone().unwrap_or_else(|| vec![0.0; d]),
                        scale: self.dpm.base_scale.unwrap_or(1.0),
                    };
                    if let Err(e) = o.validate(d) {
                        iss.push(format!("{field}: {e}"));
                    }
                    Algorithm::Dpm(o)
                }
                other => {
                    iss.push(format!("{field}.kind: unknown algorithm {other:?} (expected grid, empu, homotl, source-free or dpm)"));
                    continue;
                }
            };
            let label = table.label.clone().unwrap_or_else(|| table.kind.clone());
            if runs.iter().any(|r: &AlgorithmRun| r.label == label) {
                iss.push(format!("{field}.label: duplicate label {label:?}"));
            }
            runs.push(AlgorithmRun { label, algorithm });
        }
        runs
    }

    pub fn validate(&self, base_dir: Option<&Path>) -> Result<Experiment> {
        let mut iss = Issues(Vec::new());
        if self.name.trim().is_empty() || self.name.contains(',') {
            iss.push("name: must be nonempty and free of commas");
        }
        let repeats = iss.count("repeats", self.repeats, 1);
        let n = iss.count("n", self.n, 0);
        let family = self.family(&mut iss);
        let source = match self.source.mode.as_str() {
            "none" => Some(SourceSpec::None),
            "exact" => Some(SourceSpec::Exact),
            "sample" => match self.source.m {
                Some(m) => Some(SourceSpec::Sample { m: iss.count("source.m", m, 1) }),
                None => {
                    iss.push("source.m: required when source.mode is \"sample\"");
                    None
                }
            },
            other => {
                iss.push(format!("source.mode: unknown mode {other:?} (expected none, exact or sample)"));
                None
            }
        };
        let loss = match LossKind::parse(&self.loss.kind) {
            Some(kind) => LossSpec::new(kind, self.loss.bound).map_err(|e| iss.push(format!("loss: {e}"))).ok(),
            None => {
                iss.push(format!("loss.kind: unknown loss {:?}", self.loss.kind));
                None
            }
        };
        let free_marginal = parse_marginal(&self.prior.free_marginal).or_else(|| {
            iss.push(format!("prior.free_marginal: unknown marginal {:?}", self.prior.free_marginal));
            None
        });
        let resolution = self.grid.resolution.map(|r| iss.count("grid.resolution", r, 2));
        let saturation_threshold = iss.count("grid.saturation_threshold", self.grid.saturation_threshold, 0);
        let d = family.as_ref().map_or(1, |f| f.dim());
        let algorithms = self.algorithms(d, &mut iss);

        let mut built = None;
        if let Some(family) = family {
            let theta_t = self.point(&family, "theta_t", &self.theta_t, &mut iss);
            let theta_s = self.point(&family, "theta_s", &self.theta_s, &mut iss);
            let prior = self.prior(&family, base_dir, &mut iss);
            let mut episodes = Vec::new();
            for (i, e) in self.episodes.iter().enumerate() {
                let p = self.point(&family, &format!("episodes[{i}].theta_t"), &e.theta_t, &mut iss);
                let en = iss.count(&format!("episodes[{i}].n"), e.n, 0);
                if e.shared + e.common > family.dim() {
                    iss.push(format!("episodes[{i}]: shared + common exceeds the dimension {}", family.dim()));
                }
                if let Some(theta_t) = p {
                    episodes.push(Episode { theta_t, n: en, shared: e.shared, common: e.common });
                }
            }
            if !episodes.is_empty() && algorithms.iter().any(|a| a.algorithm != Algorithm::Grid) {
                iss.push("algorithms: time-variant scenarios support the grid algorithm only");
            }
            if let (Some(theta_t), Some(theta_s), Some(prior), Some(source), Some(loss), Some(free_marginal)) =
                (theta_t, theta_s, prior, source, loss, free_marginal)
            {
                built = Some(Scenario {
                    name: self.name.clone(),
                    family,
                    theta_t,
                    theta_s,
                    prior,
                    free_marginal,
                    source,
                    n,
                    loss,
                    seed: self.seed,
                    grid: GridOptions { resolution, saturation_threshold },
                    episodes,
                });
            }
        }
        match built {
            Some(scenario) if iss.0.is_empty() => Ok(Experiment { scenario, repeats, algorithms, bound_overlay: self.bound_overlay }),
            _ => Err(Error::Config(iss.0)),
        }
    }
}
