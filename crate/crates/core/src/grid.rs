//! Grid-posterior mixture strategy.
//!
//! Grids are cell-centred and regular over Λ, so every atom sits strictly
//! inside the box. Weights live in log space. The sequential engine never
//! materializes the joint (θs, θt) grid: it conditions a θs grid on the source
//! sample and pushes it through the conditional prior to obtain the θt prior,
//! which is the same marginal the joint grid would give.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::family::{FamilyKind, FamilySpec, Observation, ParamBox, ParamPoint};
use crate::loss::LossSpec;
use crate::numeric::{log_add_exp, logsumexp, stable_sum};
use crate::prior::{Conditional, Marginal, PriorSpec, TvtlConditional};
use crate::scenario::{RegretCurve, Scenario, SourceSpec, TrialData};

/// Largest grid the engine will allocate.
pub const MAX_GRID_POINTS: usize = 5_000_000;

/// Default per-dimension resolution.
pub fn default_resolution(d: usize) -> usize {
    match d {
        1 => 201,
        2 => 61,
        3 => 15,
        _ => 9,
    }
}

/// Default per-dimension resolution of an explicit joint (θs, θt) grid.
pub fn default_joint_resolution(d: usize) -> usize {
    if d == 1 {
        101
    } else {
        default_resolution(2 * d)
    }
}

/// Cell centres of `r` equal cells on `[lo, hi]`.
pub fn axis(lo: f64, hi: f64, r: usize) -> Vec<f64> {
    let h = (hi - lo) / r as f64;
    (0..r).map(|i| lo + (i as f64 + 0.5) * h).collect()
}

fn product_coords(axes: &[Vec<f64>]) -> (Vec<f64>, usize) {
    let d = axes.len();
    let len: usize = axes.iter().map(Vec::len).product();
    let mut coords = Vec::with_capacity(len * d);
    let mut idx = vec![0usize; d];
    for _ in 0..len {
        for k in 0..d {
            coords.push(axes[k][idx[k]]);
        }
        for k in (0..d).rev() {
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
    (coords, len)
}

fn box_axes(bounds: &ParamBox, r: usize) -> Vec<Vec<f64>> {
    (0..bounds.dim()).map(|k| axis(bounds.lower()[k], bounds.upper()[k], r)).collect()
}

fn log_cell_volume(bounds: &ParamBox, r: usize) -> f64 {
    (0..bounds.dim()).map(|k| (bounds.width(k) / r as f64).ln()).sum()
}

fn check_resolution(d: usize, r: usize, factor: usize) -> Result<()> {
    if r < 1 {
        return Err(Error::Invalid("grid resolution must be positive".into()));
    }
    let total = (r as f64).powi((d * factor) as i32);
    if total > MAX_GRID_POINTS as f64 {
        return Err(Error::Invalid(format!("grid with {total} points exceeds the {MAX_GRID_POINTS} point cap")));
    }
    Ok(())
}

/// Arrangement of the stored coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Each point is a θt value.
    Target,
    /// Each point is `(θs, θt)`; points run over θt fastest.
    Joint { target_points: usize },
    /// Each point is a θs value and θt equals it (atomic conditional).
    Slaved,
}

/// Weighted discretization of a parameter posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPosterior {
    dim: usize,
    layout: Layout,
    coords: Vec<f64>,
    log_weights: Vec<f64>,
    normalized: bool,
    /// Per-dimension axes when the points form a row-major product grid (Target or Slaved layouts).
    axes: Option<Vec<Vec<f64>>>,
}

impl GridPosterior {
    /// Grid over explicit θt points.
    pub fn from_points(points: &[ParamPoint], log_weights: Vec<f64>) -> Result<Self> {
        let dim = points.first().map(ParamPoint::dim).ok_or_else(|| Error::Invalid("grid needs at least one point".into()))?;
        if points.len() != log_weights.len() || points.iter().any(|p| p.dim() != dim) {
            return Err(Error::Invalid("points and weights must align and share a dimension".into()));
        }
        let coords = points.iter().flat_map(|p| p.coords().iter().copied()).collect();
        let mut g = Self { dim, layout: Layout::Target, coords, log_weights, normalized: false, axes: None };
        g.normalize()?;
        Ok(g)
    }

    fn product(axes: Vec<Vec<f64>>, layout: Layout, log_weights: Vec<f64>) -> Self {
        let (coords, _) = product_coords(&axes);
        Self { dim: axes.len(), layout, coords, log_weights, normalized: false, axes: Some(axes) }
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    /// Dimension of θt.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    fn stride(&self) -> usize {
        match self.layout {
            Layout::Joint { .. } => 2 * self.dim,
            _ => self.dim,
        }
    }

    /// Stored coordinates of point `i`.
    pub fn point(&self, i: usize) -> &[f64] {
        let s = self.stride();
        &self.coords[i * s..(i + 1) * s]
    }

    pub fn target_point(&self, i: usize) -> &[f64] {
        let p = self.point(i);
        match self.layout {
            Layout::Joint { .. } => &p[self.dim..],
            _ => p,
        }
    }

    pub fn source_point(&self, i: usize) -> Option<&[f64]> {
        let p = self.point(i);
        match self.layout {
            Layout::Joint { .. } => Some(&p[..self.dim]),
            Layout::Slaved => Some(p),
            Layout::Target => None,
        }
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    /// Bounding box of the points carrying positive weight.
    pub fn support_summary(&self) -> String {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        let mut count = 0usize;
        for i in 0..self.len() {
            if self.log_weights[i] == f64::NEG_INFINITY {
                continue;
            }
            count += 1;
            for (k, v) in self.target_point(i).iter().enumerate() {
                lo[k] = lo[k].min(*v);
                hi[k] = hi[k].max(*v);
            }
        }
        if count == 0 {
            return "empty support".into();
        }
        let sides: Vec<String> = lo.iter().zip(&hi).map(|(l, h)| format!("[{l:.6}, {h:.6}]")).collect();
        format!("{count} supported atoms with target coordinates in {}", sides.join(" x "))
    }

    pub fn normalize(&mut self) -> Result<()> {
        let z = logsumexp(&self.log_weights);
        if z == f64::NEG_INFINITY || z.is_nan() {
            return Err(Error::PosteriorCollapsed("every grid weight is zero".into()));
        }
        for w in &mut self.log_weights {
            *w -= z;
        }
        self.normalized = true;
        Ok(())
    }

    fn add_log_likelihood(&mut self, family: &FamilySpec, data: &[Observation], use_source: bool) -> Result<()> {
        if data.is_empty() {
            return Ok(());
        }
        let before = self.support_summary();
        let counts = bernoulli_counts(family, data);
        for i in 0..self.len() {
            if self.log_weights[i] == f64::NEG_INFINITY {
                continue;
            }
            let theta = if use_source {
                self.source_point(i).ok_or_else(|| Error::Invalid("grid has no source coordinates".into()))?
            } else {
                self.target_point(i)
            };
            let ll = match counts {
                Some((ones, zeros)) => bernoulli_count_loglik(theta[0], ones, zeros),
                None => family.log_likelihood(theta, data),
            };
            self.log_weights[i] += ll;
        }
        self.normalize().map_err(|_| {
            Error::PosteriorCollapsed(format!("data impossible under prior support ({before})"))
        })
    }

    /// Bayes step on the target coordinate.
    pub fn update_in_place(&mut self, family: &FamilySpec, z: &Observation) -> Result<()> {
        self.add_log_likelihood(family, std::slice::from_ref(z), false)
    }

    pub fn update_batch_in_place(&mut self, family: &FamilySpec, data: &[Observation]) -> Result<()> {
        self.add_log_likelihood(family, data, false)
    }

    pub fn condition_source_in_place(&mut self, family: &FamilySpec, data: &[Observation]) -> Result<()> {
        if self.layout == Layout::Target {
            return Err(Error::Invalid("grid has no source coordinates".into()));
        }
        self.add_log_likelihood(family, data, true)
    }

    /// `log Σ_i w_i P_{θt,i}(z)`.
    pub fn predictive_log_density(&self, family: &FamilySpec, z: &Observation) -> f64 {
        let terms: Vec<f64> = (0..self.len())
            .map(|i| {
                let w = self.log_weights[i];
                if w == f64::NEG_INFINITY {
                    w
                } else {
                    w + family.log_density(self.target_point(i), z)
                }
            })
            .collect();
        logsumexp(&terms)
    }

    /// Predictive `P(y = 1 | x)`.
    pub fn predictive_prob_one(&self, family: &FamilySpec, z: &Observation) -> f64 {
        let one = z.with_label(1);
        self.predictive_log_density(family, &one).exp().min(1.0)
    }

    /// Posterior mean of θt.
    pub fn target_mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for i in 0..self.len() {
            let w = self.log_weights[i].exp();
            for (k, v) in self.target_point(i).iter().enumerate() {
                m[k] += w * v;
            }
        }
        m
    }

    /// Total posterior variance of θt (trace of the covariance).
    pub fn target_variance(&self) -> f64 {
        let m = self.target_mean();
        let mut v = 0.0;
        for i in 0..self.len() {
            let w = self.log_weights[i].exp();
            v += w * self.target_point(i).iter().zip(&m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        v
    }

    /// Marginal over θt (identity for Target and Slaved layouts).
    pub fn marginal_target(&self) -> GridPosterior {
        match self.layout {
            Layout::Joint { target_points } => {
                let sources = self.len() / target_points;
                let mut lw = vec![f64::NEG_INFINITY; target_points];
                for s in 0..sources {
                    for (t, slot) in lw.iter_mut().enumerate() {
                        *slot = log_add_exp(*slot, self.log_weights[s * target_points + t]);
                    }
                }
                let coords = (0..target_points).flat_map(|t| self.target_point(t).to_vec()).collect();
                let mut g = GridPosterior { dim: self.dim, layout: Layout::Target, coords, log_weights: lw, normalized: false, axes: None };
                if self.normalized {
                    let _ = g.normalize();
                }
                g
            }
            _ => {
                let mut g = self.clone();
                g.layout = Layout::Target;
                g
            }
        }
    }

    /// Marginal over θs.
    pub fn marginal_source(&self) -> Option<GridPosterior> {
        match self.layout {
            Layout::Joint { target_points } => {
                let sources = self.len() / target_points;
                let lw: Vec<f64> = (0..sources)
                    .map(|s| logsumexp(&self.log_weights[s * target_points..(s + 1) * target_points]))
                    .collect();
                let coords = (0..sources).flat_map(|s| self.point(s * target_points)[..self.dim].to_vec()).collect();
                let mut g = GridPosterior { dim: self.dim, layout: Layout::Target, coords, log_weights: lw, normalized: false, axes: None };
                if self.normalized {
                    let _ = g.normalize();
                }
                Some(g)
            }
            Layout::Slaved => {
                let mut g = self.clone();
                g.layout = Layout::Target;
                Some(g)
            }
            Layout::Target => None,
        }
    }
}

fn bernoulli_counts(family: &FamilySpec, data: &[Observation]) -> Option<(u64, u64)> {
    if family.kind() != FamilyKind::Bernoulli {
        return None;
    }
    let ones = data.iter().filter(|z| z.label() == 1).count() as u64;
    Some((ones, data.len() as u64 - ones))
}

fn bernoulli_count_loglik(theta: f64, ones: u64, zeros: u64) -> f64 {
    let a = if ones == 0 { 0.0 } else { ones as f64 * theta.ln() };
    let b = if zeros == 0 { 0.0 } else { zeros as f64 * (1.0 - theta).ln() };
    a + b
}

/// Regular grid weighted by the joint prior: `(θs, θt)` pairs, or θs alone
/// with θt slaved to it for the atomic conditional.
pub fn build_grid(prior: &PriorSpec, family: &FamilySpec, resolution: usize) -> Result<GridPosterior> {
    let bounds = family.bounds();
    if prior.bounds() != bounds {
        return Err(Error::Invalid("prior and family boxes differ".into()));
    }
    let d = bounds.dim();
    let axes = box_axes(bounds, resolution);
    let cell = log_cell_volume(bounds, resolution);
    if prior.is_atomic() {
        check_resolution(d, resolution, 1)?;
        let (coords, len) = product_coords(&axes);
        let lw = (0..len).map(|i| prior.log_marginal_density(&coords[i * d..(i + 1) * d]) + cell).collect();
        let mut g = GridPosterior::product(axes, Layout::Slaved, lw);
        g.normalize().map_err(|_| Error::DegeneratePrior)?;
        return Ok(g);
    }
    check_resolution(d, resolution, 2)?;
    let (pts, len) = product_coords(&axes);
    let mut coords = Vec::with_capacity(len * len * 2 * d);
    let mut lw = Vec::with_capacity(len * len);
    for s in 0..len {
        let ts = &pts[s * d..(s + 1) * d];
        let ms = prior.log_marginal_density(ts);
        for t in 0..len {
            let tt = &pts[t * d..(t + 1) * d];
            coords.extend_from_slice(ts);
            coords.extend_from_slice(tt);
            lw.push(ms + prior.log_conditional_density(tt, ts)? + 2.0 * cell);
        }
    }
    let mut g = GridPosterior { dim: d, layout: Layout::Joint { target_points: len }, coords, log_weights: lw, normalized: false, axes: None };
    g.normalize().map_err(|_| Error::DegeneratePrior)?;
    Ok(g)
}

pub fn condition_on_source(grid: &GridPosterior, family: &FamilySpec, data: &[Observation]) -> Result<GridPosterior> {
    let mut g = grid.clone();
    g.condition_source_in_place(family, data)?;
    Ok(g)
}

pub fn update_target(grid: &GridPosterior, family: &FamilySpec, z: &Observation) -> Result<GridPosterior> {
    let mut g = grid.clone();
    g.update_in_place(family, z)?;
    Ok(g)
}

pub fn predictive_log_density(grid: &GridPosterior, family: &FamilySpec, z: &Observation) -> f64 {
    grid.predictive_log_density(family, z)
}

/// Output of a bounded-loss prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictorOutput {
    pub action: f64,
    pub expected_loss: f64,
    /// Predictive `P(y = 1)` the action was chosen against.
    pub prob_one: f64,
}

/// Bayes action over a finite candidate set; ties go to the lowest index.
pub fn predict_bounded(grid: &GridPosterior, family: &FamilySpec, loss: &LossSpec, candidates: &[f64], z: &Observation) -> Result<PredictorOutput> {
    let p = grid.predictive_prob_one(family, z);
    let (action, expected_loss) = loss.best_action(candidates, p)?;
    Ok(PredictorOutput { action, expected_loss, prob_one: p })
}

/// Belief about θs after seeing the source.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceBelief {
    Atom(ParamPoint),
    /// Normalized product grid over θs.
    Grid(GridPosterior),
}

/// Conditions the source marginal on `data`, switching to an MLE atom past the saturation threshold.
pub fn source_belief_from_data(
    prior: &PriorSpec,
    family: &FamilySpec,
    data: &[Observation],
    resolution: usize,
    saturation_threshold: usize,
) -> Result<SourceBelief> {
    let bounds = family.bounds();
    if data.len() > saturation_threshold && marginal_is_proper(prior) {
        let (mle, _) = family.mle(data)?;
        return Ok(SourceBelief::Atom(mle));
    }
    let d = bounds.dim();
    check_resolution(d, resolution, 1)?;
    let axes = box_axes(bounds, resolution);
    let cell = log_cell_volume(bounds, resolution);
    let (coords, len) = product_coords(&axes);
    let lw = (0..len).map(|i| prior.log_marginal_density(&coords[i * d..(i + 1) * d]) + cell).collect();
    let mut g = GridPosterior::product(axes, Layout::Slaved, lw);
    g.normalize().map_err(|_| Error::DegeneratePrior)?;
    g.condition_source_in_place(family, data)?;
    Ok(SourceBelief::Grid(g))
}

fn marginal_is_proper(prior: &PriorSpec) -> bool {
    match prior.marginal() {
        Marginal::UniformBox => true,
        Marginal::LinearPlusHalf => prior.bounds().lower().iter().all(|l| *l > -0.5),
    }
}

/// Source-free prior `ω̂(θt)` on a product grid.
pub fn free_target_prior(marginal: Marginal, bounds: &ParamBox, resolution: usize) -> Result<GridPosterior> {
    let d = bounds.dim();
    check_resolution(d, resolution, 1)?;
    let free = PriorSpec::new(bounds.clone(), marginal, Conditional::UniformBox)?;
    let axes = box_axes(bounds, resolution);
    let cell = log_cell_volume(bounds, resolution);
    let (coords, len) = product_coords(&axes);
    let lw = (0..len).map(|i| free.log_marginal_density(&coords[i * d..(i + 1) * d]) + cell).collect();
    let mut g = GridPosterior::product(axes, Layout::Target, lw);
    g.normalize().map_err(|_| Error::DegeneratePrior)?;
    Ok(g)
}

/// Pushes the source belief through `ω(θt | θs)`: the θt prior before any target data.
pub fn induced_target_prior(prior: &PriorSpec, belief: &SourceBelief, resolution: usize) -> Result<GridPosterior> {
    let bounds = prior.bounds();
    let d = bounds.dim();
    if prior.is_atomic() {
        return match belief {
            SourceBelief::Atom(p) => GridPosterior::from_points(std::slice::from_ref(p), vec![0.0]),
            SourceBelief::Grid(g) => {
                let mut t = g.clone();
                t.layout = Layout::Target;
                Ok(t)
            }
        };
    }
    check_resolution(d, resolution, 1)?;
    let axes = box_axes(bounds, resolution);
    let cell = log_cell_volume(bounds, resolution);
    let (coords, len) = product_coords(&axes);
    let lw: Vec<f64> = match belief {
        SourceBelief::Atom(s) => (0..len)
            .map(|j| Ok(prior.log_conditional_density(&coords[j * d..(j + 1) * d], s)? + cell))
            .collect::<Result<_>>()?,
        SourceBelief::Grid(g) => {
            if let Conditional::UniformBox = prior.conditional() {
                vec![cell - bounds.volume().ln(); len]
            } else if let (Some(kernels), Some(src_axes)) = (prior.separable_kernel(), g.axes.as_ref()) {
                let mut t = g.log_weights.clone();
                let mut shape: Vec<usize> = src_axes.iter().map(Vec::len).collect();
                for k in 0..d {
                    let (lo, hi) = (bounds.lower()[k], bounds.upper()[k]);
                    let kmat: Vec<Vec<f64>> = axes[k]
                        .iter()
                        .map(|&tt| src_axes[k].iter().map(|&ss| kernels[k].log_density(tt, ss, lo, hi)).collect())
                        .collect();
                    t = contract_axis(&t, &shape, k, &kmat);
                    shape[k] = axes[k].len();
                }
                t.into_iter().map(|v| v + cell).collect()
            } else {
                let src: Vec<usize> = (0..g.len()).filter(|&i| g.log_weights[i] > f64::NEG_INFINITY).collect();
                (0..len)
                    .map(|j| {
                        let tt = &coords[j * d..(j + 1) * d];
                        let terms = src
                            .iter()
                            .map(|&i| Ok(g.log_weights[i] + prior.log_conditional_density(tt, g.target_point(i))?))
                            .collect::<Result<Vec<f64>>>()?;
                        Ok(logsumexp(&terms) + cell)
                    })
                    .collect::<Result<_>>()?
            }
        }
    };
    let mut out = GridPosterior::product(axes, Layout::Target, lw);
    out.normalize().map_err(|_| Error::DegeneratePrior)?;
    Ok(out)
}

/// Replaces axis `k` of a row-major log tensor: `out[.., t, ..] = lse_s(kmat[t][s] + input[.., s, ..])`.
fn contract_axis(input: &[f64], shape: &[usize], k: usize, kmat: &[Vec<f64>]) -> Vec<f64> {
    let outer: usize = shape[..k].iter().product();
    let inner: usize = shape[k + 1..].iter().product();
    let s_len = shape[k];
    let t_len = kmat.len();
    let mut out = vec![f64::NEG_INFINITY; outer * t_len * inner];
    let mut terms = vec![0.0; s_len];
    for o in 0..outer {
        for t in 0..t_len {
            let row = &kmat[t];
            for i in 0..inner {
                for s in 0..s_len {
                    terms[s] = row[s] + input[(o * s_len + s) * inner + i];
                }
                out[(o * t_len + t) * inner + i] = logsumexp(&terms);
            }
        }
    }
    out
}

/// Resolution used for a scenario.
pub fn scenario_resolution(scenario: &Scenario) -> usize {
    scenario.grid.resolution.unwrap_or_else(|| default_resolution(scenario.family.dim()))
}

/// Builds the θs belief a scenario's source configuration implies.
pub fn scenario_source_belief(scenario: &Scenario, source: &[Observation]) -> Result<Option<SourceBelief>> {
    Ok(match scenario.source {
        SourceSpec::None => None,
        SourceSpec::Exact => Some(SourceBelief::Atom(scenario.theta_s.clone())),
        SourceSpec::Sample { .. } => Some(source_belief_from_data(
            &scenario.prior,
            &scenario.family,
            source,
            scenario_resolution(scenario),
            scenario.grid.saturation_threshold,
        )?),
    })
}

/// Predicts each target point in turn, recording realized regret, then updates.
pub fn sequential_regret(
    family: &FamilySpec,
    grid: &mut GridPosterior,
    data: &[Observation],
    theta_t: &[f64],
    loss: &LossSpec,
) -> Result<(Vec<f64>, Vec<bool>)> {
    let candidates = loss.default_candidates();
    let mut regrets = Vec::with_capacity(data.len());
    let mut mistakes = Vec::with_capacity(data.len());
    for (k, z) in data.iter().enumerate() {
        let p1 = grid.predictive_prob_one(family, z);
        mistakes.push(u8::from(p1 > 0.5) != z.label());
        if loss.is_density() {
            let lq = grid.predictive_log_density(family, z);
            if lq == f64::NEG_INFINITY {
                return Err(Error::InfiniteRegret {
                    step: k + 1,
                    diagnostic: format!("predictive density is zero at the observed outcome; {}", grid.support_summary()),
                });
            }
            regrets.push(family.log_density(theta_t, z) - lq);
        } else {
            let (b, _) = loss.best_action(&candidates, p1)?;
            let (b_star, _) = loss.best_action(&candidates, family.prob_one(theta_t, z))?;
            regrets.push(loss.action_loss(b, z.label()) - loss.action_loss(b_star, z.label()));
        }
        grid.update_in_place(family, z)?;
    }
    Ok((regrets, mistakes))
}

/// Mixture strategy with the source, on the given trial data.
pub fn run_otl_with(scenario: &Scenario, data: &TrialData, seed: u64) -> Result<RegretCurve> {
    let start = Instant::now();
    let res = scenario_resolution(scenario);
    let mut grid = match scenario_source_belief(scenario, &data.source)? {
        Some(belief) => induced_target_prior(&scenario.prior, &belief, res)?,
        None => free_target_prior(scenario.free_marginal, scenario.family.bounds(), res)?,
    };
    let (r, m) = sequential_regret(&scenario.family, &mut grid, &data.target, &scenario.theta_t, &scenario.loss)?;
    Ok(RegretCurve::from_instantaneous(r, Some(m), seed, start.elapsed()))
}

/// Mixture strategy with the source, drawing the trial data from `scenario.seed`.
pub fn run_otl(scenario: &Scenario) -> Result<RegretCurve> {
    let data = scenario.trial_data(scenario.seed);
    run_otl_with(scenario, &data, scenario.seed)
}

/// The same strategy with a θt-only grid under `ω̂(θt)`, ignoring the source.
pub fn run_source_free_with(scenario: &Scenario, data: &TrialData, seed: u64) -> Result<RegretCurve> {
    let start = Instant::now();
    let mut grid = free_target_prior(scenario.free_marginal, scenario.family.bounds(), scenario_resolution(scenario))?;
    let (r, m) = sequential_regret(&scenario.family, &mut grid, &data.target, &scenario.theta_t, &scenario.loss)?;
    Ok(RegretCurve::from_instantaneous(r, Some(m), seed, start.elapsed()))
}

/// Monte Carlo excess-risk estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcessRisk {
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
}

/// Excess risk of the batch posterior predictive after `n` target samples,
/// averaged over `trials` seeds starting at `scenario.seed`. Bernoulli
/// held-out expectations are exact; logistic ones use `heldout` draws.
pub fn run_itl(scenario: &Scenario, trials: usize, heldout: usize) -> Result<ExcessRisk> {
    if trials == 0 {
        return Err(Error::Invalid("run_itl needs at least one trial".into()));
    }
    let res = scenario_resolution(scenario);
    let mut values = Vec::with_capacity(trials);
    for t in 0..trials {
        let seed = scenario.seed.wrapping_add(t as u64);
        let data = scenario.trial_data(seed);
        let mut grid = match scenario_source_belief(scenario, &data.source)? {
            Some(belief) => induced_target_prior(&scenario.prior, &belief, res)?,
            None => free_target_prior(scenario.free_marginal, scenario.family.bounds(), res)?,
        };
        grid.update_batch_in_place(&scenario.family, &data.target)?;
        values.push(excess_risk_of(scenario, &grid, seed, heldout)?);
    }
    let (mean, stderr) = crate::numeric::mean_and_stderr(&values);
    Ok(ExcessRisk { mean, stderr, trials })
}

/// `E[log P_θt*(Z') - log Q(Z')]` for one posterior.
pub fn excess_risk_of(scenario: &Scenario, grid: &GridPosterior, seed: u64, heldout: usize) -> Result<f64> {
    let f = &scenario.family;
    let truth = &scenario.theta_t;
    match f.kind() {
        FamilyKind::Bernoulli => {
            let mut acc = 0.0;
            for y in [0u8, 1] {
                let z = Observation::Bit(y);
                let lp = f.log_density(truth, &z);
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                let lq = grid.predictive_log_density(f, &z);
                acc += lp.exp() * (lp - lq);
            }
            Ok(acc)
        }
        FamilyKind::Logistic => {
            if heldout == 0 {
                return Err(Error::Invalid("held-out draw count must be positive".into()));
            }
            let mut rng = crate::rng::stream(seed, crate::scenario::HELDOUT_STREAM);
            let vals: Vec<f64> = (0..heldout)
                .map(|_| {
                    let z = f.sample(truth, &mut rng);
                    f.log_density(truth, &z) - grid.predictive_log_density(f, &z)
                })
                .collect();
            Ok(stable_sum(&vals) / heldout as f64)
        }
    }
}

/// Posterior over `(θs, θt)` restricted to the plausible θs atoms, used to
/// carry one episode's target posterior into the next.
struct EpisodeJoint {
    sources: Vec<(Vec<f64>, f64)>,
    targets: GridPosterior,
    /// `log_w[s][t]`, normalized jointly.
    log_w: Vec<Vec<f64>>,
}

const SOURCE_PRUNE_NATS: f64 = 40.0;

fn plausible_sources(belief: &SourceBelief) -> Vec<(Vec<f64>, f64)> {
    match belief {
        SourceBelief::Atom(p) => vec![(p.coords().to_vec(), 0.0)],
        SourceBelief::Grid(g) => {
            let max = g.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let kept: Vec<(Vec<f64>, f64)> = (0..g.len())
                .filter(|&i| g.log_weights[i] > max - SOURCE_PRUNE_NATS)
                .map(|i| (g.target_point(i).to_vec(), g.log_weights[i]))
                .collect();
            let z = logsumexp(&kept.iter().map(|k| k.1).collect::<Vec<_>>());
            kept.into_iter().map(|(p, w)| (p, w - z)).collect()
        }
    }
}

fn episode_joint(prior: &PriorSpec, family: &FamilySpec, sources: &[(Vec<f64>, f64)], data: &[Observation], resolution: usize) -> Result<EpisodeJoint> {
    let bounds = prior.bounds();
    let targets = free_target_prior(Marginal::UniformBox, bounds, resolution)?;
    let counts = bernoulli_counts(family, data);
    let ll: Vec<f64> = (0..targets.len())
        .map(|t| {
            let th = targets.target_point(t);
            match counts {
                Some((a, b)) => bernoulli_count_loglik(th[0], a, b),
                None => family.log_likelihood(th, data),
            }
        })
        .collect();
    let mut log_w = Vec::with_capacity(sources.len());
    for (s, qs) in sources {
        let row = (0..targets.len())
            .map(|t| {
                let th = targets.target_point(t);
                let prior_t = if prior.is_atomic() {
                    if th.iter().zip(s).all(|(a, b)| (a - b).abs() < 1e-12) { 0.0 } else { f64::NEG_INFINITY }
                } else {
                    prior.log_conditional_density(th, s)?
                };
                Ok(qs + prior_t + ll[t])
            })
            .collect::<Result<Vec<f64>>>()?;
        log_w.push(row);
    }
    let flat: Vec<f64> = log_w.iter().flatten().copied().collect();
    let z = logsumexp(&flat);
    if z == f64::NEG_INFINITY {
        return Err(Error::PosteriorCollapsed("previous episode data impossible under the prior support".into()));
    }
    for row in &mut log_w {
        for v in row.iter_mut() {
            *v -= z;
        }
    }
    Ok(EpisodeJoint { sources: sources.to_vec(), targets, log_w })
}

fn tvtl_prior(tv: &TvtlConditional, bounds: &ParamBox, joint: &EpisodeJoint, shared: usize, common: usize, resolution: usize) -> Result<GridPosterior> {
    let mut out = free_target_prior(Marginal::UniformBox, bounds, resolution)?;
    let cell = log_cell_volume(bounds, resolution);
    let mut terms = Vec::new();
    for j in 0..out.len() {
        let th = out.target_point(j).to_vec();
        terms.clear();
        for (si, (s, _)) in joint.sources.iter().enumerate() {
            for t in 0..joint.targets.len() {
                let w = joint.log_w[si][t];
                if w == f64::NEG_INFINITY {
                    continue;
                }
                terms.push(w + tv.log_density(bounds, &th, joint.targets.target_point(t), s, shared, common));
            }
        }
        out.log_weights[j] = logsumexp(&terms) + cell;
    }
    out.normalize().map_err(|_| Error::DegeneratePrior)?;
    Ok(out)
}

/// Time-variant transfer: each episode's prior conditions on the source and on
/// the previous episode's data only.
pub fn run_tvtl_with(scenario: &Scenario, source: &[Observation], episodes: &[Vec<Observation>], seed: u64) -> Result<Vec<RegretCurve>> {
    if episodes.len() != scenario.episodes.len() {
        return Err(Error::Invalid("episode data and episode list differ in length".into()));
    }
    let d = scenario.family.dim();
    for ep in &scenario.episodes {
        if ep.shared + ep.common > d {
            return Err(Error::Invalid(format!(
                "partition blocks overlap: shared {} + common {} exceeds dimension {d}",
                ep.shared, ep.common
            )));
        }
    }
    let res = scenario_resolution(scenario);
    let belief = scenario_source_belief(scenario, source)?.ok_or_else(|| Error::Invalid("time-variant runs need a source".into()))?;
    let sources = plausible_sources(&belief);
    let mut curves = Vec::with_capacity(episodes.len());
    let mut prev: Option<EpisodeJoint> = None;
    for (i, (ep, data)) in scenario.episodes.iter().zip(episodes).enumerate() {
        let start = Instant::now();
        let mut grid = match &prev {
            None => induced_target_prior(&scenario.prior, &belief, res)?,
            Some(joint) => {
                let tv = scenario.prior.tvtl().ok_or_else(|| Error::Invalid("multiple episodes need a time-variant conditional".into()))?;
                tvtl_prior(tv, scenario.prior.bounds(), joint, ep.shared, ep.common, res)?
            }
        };
        let (r, m) = sequential_regret(&scenario.family, &mut grid, data, &ep.theta_t, &scenario.loss)?;
        curves.push(RegretCurve::from_instantaneous(r, Some(m), seed, start.elapsed()));
        if i + 1 < episodes.len() {
            prev = Some(episode_joint(&scenario.prior, &scenario.family, &sources, data, res)?);
        }
    }
    Ok(curves)
}

pub fn run_tvtl(scenario: &Scenario) -> Result<Vec<RegretCurve>> {
    let source = scenario.source_data(scenario.seed);
    let episodes: Vec<Vec<Observation>> = (0..scenario.episodes.len()).map(|i| scenario.episode_data(scenario.seed, i)).collect();
    run_tvtl_with(scenario, &source, &episodes, scenario.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_is_cell_centred() {
        let a = axis(0.0, 1.0, 4);
        assert_eq!(a, vec![0.125, 0.375, 0.625, 0.875]);
    }

    #[test]
    fn contraction_matches_direct_sum() {
        // 2x3 tensor, contract axis 1 with a 2x3 kernel.
        let input: Vec<f64> = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0].iter().map(|v: &f64| v.ln()).collect();
        let kmat = vec![vec![0.0, 1f64.ln(), 2f64.ln()], vec![3f64.ln(), 0.5f64.ln(), 0.0]];
        let out = contract_axis(&input, &[2, 3], 1, &kmat);
        let expect = [1.0 + 2.0 + 6.0, 3.0 + 1.0 + 3.0, 4.0 + 5.0 + 12.0, 12.0 + 2.5 + 6.0];
        for (o, e) in out.iter().zip(expect) {
            assert!((o.exp() - e).abs() < 1e-12);
        }
    }
}
