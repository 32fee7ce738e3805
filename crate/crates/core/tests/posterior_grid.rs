mod common;

use bayestl::bernoulli::{exact_expected_regret, ExactPrior, SourceMode};
use bayestl::grid::*;
use bayestl::rng::rng_from_seed;
use bayestl::{Conditional, FamilySpec, LossKind, LossSpec, Marginal, Observation, ParamBox, ParamPoint, PriorSpec};
use common::experiment;
use proptest::prelude::*;

fn bit(b: u8) -> Observation {
    Observation::Bit(b)
}

fn points(v: &[f64]) -> Vec<ParamPoint> {
    v.iter().map(|x| ParamPoint::scalar(*x).unwrap()).collect()
}

fn lse(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[test]
fn build_grid_examples() {
    let f = FamilySpec::bernoulli();
    let uniform = PriorSpec::new(ParamBox::unit(1), Marginal::UniformBox, Conditional::UniformBox).unwrap();
    let g = build_grid(&uniform, &f, 101).unwrap();
    assert!(g.is_normalized());
    let first = g.log_weights()[0];
    assert!(g.log_weights().iter().all(|w| (w - first).abs() < 1e-12));

    let sum = PriorSpec::new(ParamBox::unit(1), Marginal::LinearPlusHalf, Conditional::SumLinear).unwrap();
    let g = build_grid(&sum, &f, 51).unwrap();
    let src = g.marginal_source().unwrap();
    for i in 0..src.len() {
        let s = src.target_point(i)[0];
        assert!((src.log_weights()[i].exp() * 51.0 - (s + 0.5)).abs() < 1e-2, "{s}");
    }

    let single = GridPosterior::from_points(&points(&[0.5]), vec![0.0]).unwrap();
    assert_eq!(single.predictive_log_density(&f, &bit(1)).exp(), 0.5);
}

#[test]
fn source_conditioning() {
    let f = FamilySpec::bernoulli();
    let prior = PriorSpec::new(ParamBox::unit(1), Marginal::UniformBox, Conditional::BoxConditional(0.1)).unwrap();
    let joint = build_grid(&prior, &f, 41).unwrap();
    assert_eq!(condition_on_source(&joint, &f, &[]).unwrap(), joint);

    let SourceBelief::Grid(g) = source_belief_from_data(&prior, &f, &[bit(1)], 201, usize::MAX).unwrap() else {
        panic!("expected a grid belief");
    };
    for i in 0..g.len() {
        let s = g.target_point(i)[0];
        assert!((g.log_weights()[i].exp() * 201.0 - 2.0 * s).abs() < 1e-3);
    }

    let data = f.sample_n(&[0.35], 100_000, &mut rng_from_seed(8));
    let SourceBelief::Grid(g) = source_belief_from_data(&prior, &f, &data, 2001, usize::MAX).unwrap() else {
        panic!("expected a grid belief");
    };
    assert!((g.target_mean()[0] - 0.35).abs() < 0.005);
    match source_belief_from_data(&prior, &f, &data, 201, 50_000).unwrap() {
        SourceBelief::Atom(p) => assert!((p.coords()[0] - 0.35).abs() < 0.005),
        SourceBelief::Grid(_) => panic!("expected the saturated atom"),
    }
}

#[test]
fn impossible_observation_collapses() {
    let f = FamilySpec::bernoulli();
    let g = GridPosterior::from_points(&points(&[1.0]), vec![0.0]).unwrap();
    assert!(matches!(update_target(&g, &f, &bit(0)), Err(bayestl::Error::PosteriorCollapsed(_))));
    assert!(GridPosterior::from_points(&points(&[0.2, 0.3]), vec![f64::NEG_INFINITY; 2]).is_err());
}

#[test]
fn source_concentrates_the_target_posterior() {
    let f = FamilySpec::bernoulli();
    let prior = PriorSpec::new(ParamBox::unit(1), Marginal::UniformBox, Conditional::BoxConditional(0.1)).unwrap();
    let data = f.sample_n(&[1.0 / 3.0], 150, &mut rng_from_seed(2));
    let belief = SourceBelief::Atom(ParamPoint::scalar(0.35).unwrap());
    let mut with = induced_target_prior(&prior, &belief, 201).unwrap();
    with.update_batch_in_place(&f, &data).unwrap();
    let mut without = free_target_prior(Marginal::UniformBox, f.bounds(), 201).unwrap();
    without.update_batch_in_place(&f, &data).unwrap();
    assert!(with.target_variance() < without.target_variance());
}

#[test]
fn predictive_examples() {
    let f = FamilySpec::bernoulli();
    let single = GridPosterior::from_points(&points(&[0.5]), vec![0.0]).unwrap();
    assert!((single.predictive_log_density(&f, &bit(1)) - 0.5f64.ln()).abs() < 1e-15);
    let pair = GridPosterior::from_points(&points(&[0.25, 0.75]), vec![0.0, 0.0]).unwrap();
    assert!((pair.predictive_log_density(&f, &bit(1)) - 0.5f64.ln()).abs() < 1e-15);
    let mut g = free_target_prior(Marginal::UniformBox, f.bounds(), 201).unwrap();
    g.update_in_place(&f, &bit(1)).unwrap();
    assert!((g.predictive_log_density(&f, &bit(1)).exp() - 2.0 / 3.0).abs() < 1e-3);
}

#[test]
fn bounded_predictions() {
    let f = FamilySpec::bernoulli();
    let g = GridPosterior::from_points(&points(&[0.7]), vec![0.0]).unwrap();
    let zero_one = LossSpec::new(LossKind::ZeroOne, Some(1.0)).unwrap();
    assert_eq!(predict_bounded(&g, &f, &zero_one, &[0.0, 1.0], &bit(0)).unwrap().action, 1.0);
    let tie = GridPosterior::from_points(&points(&[0.5]), vec![0.0]).unwrap();
    assert_eq!(predict_bounded(&tie, &f, &zero_one, &[0.0, 1.0], &bit(0)).unwrap().action, 0.0);
    let sq = LossSpec::new(LossKind::Squared, Some(1.0)).unwrap();
    let g = GridPosterior::from_points(&points(&[0.2, 0.6]), vec![0.0, 0.0]).unwrap();
    let out = predict_bounded(&g, &f, &sq, &sq.default_candidates(), &bit(0)).unwrap();
    assert!((out.action - 0.4).abs() < 1e-12);
    assert!(predict_bounded(&g, &f, &sq, &[], &bit(0)).is_err());
    assert!(LossSpec::new(LossKind::Hinge, None).is_err());
}

#[test]
fn empty_run_has_empty_curve() {
    let mut exp = common::bernoulli_exact(0.3, 0.35, r#"conditional = "box", c = 0.1"#, 10);
    exp.scenario.n = 0;
    let c = run_otl(&exp.scenario).unwrap();
    assert!(c.instantaneous.is_empty());
    assert_eq!(c.total(), 0.0);
}

#[test]
fn grid_regret_tracks_exact_enumeration() {
    let exp = common::bernoulli_exact(1.0 / 3.0, 0.4, r#"conditional = "sum-linear", marginal = "linear-plus-half""#, 100);
    let totals: Vec<f64> = (0..400).map(|i| {
        let s = &exp.scenario;
        let data = s.trial_data(1000 + i);
        run_otl_with(s, &data, 1000 + i).unwrap().total()
    }).collect();
    let (mean, se) = common::mean_stderr(&totals);
    let exact = exact_expected_regret(1.0 / 3.0, 0.4, ExactPrior::Sum, 100, SourceMode::Saturated).unwrap();
    assert!((mean - exact).abs() < 3.0 * se, "{mean} ± {se} vs {exact}");
}

#[test]
fn itl_excess_risk() {
    let mut proper = common::bernoulli_exact(0.3, 0.32, r#"conditional = "box", c = 0.1"#, 10_000);
    proper.scenario.seed = 4;
    let r = run_itl(&proper.scenario, 8, 0).unwrap();
    assert!(r.mean < 2.0 / 10_000.0, "{r:?}");

    let mut improper = common::bernoulli_exact(0.3, 0.5, r#"conditional = "box", c = 0.1"#, 10_000);
    improper.scenario.seed = 5;
    let r = run_itl(&improper.scenario, 4, 0).unwrap();
    let kl = FamilySpec::bernoulli().kl_divergence(&[0.3], &[0.4]);
    assert!(r.mean >= 0.9 * kl, "{} vs {kl}", r.mean);

    let f = FamilySpec::bernoulli();
    let atom = GridPosterior::from_points(&points(&[0.3]), vec![0.0]).unwrap();
    assert!(excess_risk_of(&proper.scenario, &atom, 0, 0).unwrap().abs() < 1e-15);
    let _ = f;
}

#[test]
fn time_variant_episodes() {
    let base = r#"
name = "tv"
family = { kind = "bernoulli" }
theta_t = [0.3]
theta_s = [0.35]
n = 60
repeats = 1
algorithms = ["grid"]
prior = { conditional = "box", c = 0.1, tvtl_kernel = "box", tvtl_c = 0.03 }
"#;
    let single = experiment(&format!("{base}episodes = [{{ theta_t = [0.3], n = 60 }}]\n"));
    let plain = experiment(base);
    let s = &single.scenario;
    for seed in 0..5 {
        let tv = run_tvtl_with(s, &s.source_data(seed), &[s.episode_data(seed, 0)], seed).unwrap();
        let otl = run_otl_with(&plain.scenario, &plain.scenario.trial_data(seed), seed).unwrap();
        assert_eq!(tv[0].instantaneous, otl.instantaneous);
    }

    let empty = experiment(&format!("{base}episodes = [{{ theta_t = [0.3], n = 40 }}, {{ theta_t = [0.3], n = 0, common = 1 }}]\n"));
    let c = run_tvtl(&empty.scenario).unwrap();
    assert_eq!(c[1].total(), 0.0);

    let two = experiment(&format!(
        "{}episodes = [{{ theta_t = [0.3], n = 40 }}, {{ theta_t = [0.3], n = 40, common = 1 }}]\n",
        base.replace(r#"conditional = "box", c = 0.1"#, r#"conditional = "uniform""#)
    ));
    let s = &two.scenario;
    let (mut first, mut second) = (Vec::new(), Vec::new());
    for seed in 0..200 {
        let eps: Vec<_> = (0..2).map(|i| s.episode_data(seed, i)).collect();
        let c = run_tvtl_with(s, &s.source_data(seed), &eps, seed).unwrap();
        first.push(c[0].total());
        second.push(c[1].total());
    }
    let (d, _) = common::paired(&second, &first);
    assert!(d <= 0.0, "episode 2 regret exceeds episode 1 by {d}");

    let overlapping = r#"
name = "bad"
family = { kind = "bernoulli" }
theta_t = [0.3]
theta_s = [0.35]
n = 10
repeats = 1
algorithms = ["grid"]
prior = { conditional = "box", c = 0.1, tvtl_kernel = "box", tvtl_c = 0.03 }
episodes = [{ theta_t = [0.3], n = 10, shared = 1, common = 1 }]
"#;
    assert!(bayestl::harness::parse_config(overlapping, None).is_err());
}

#[test]
fn improper_support_stays_empty() {
    let f = FamilySpec::bernoulli();
    let prior = PriorSpec::new(ParamBox::unit(1), Marginal::UniformBox, Conditional::BoxConditional(0.1)).unwrap();
    let mut g = induced_target_prior(&prior, &SourceBelief::Atom(ParamPoint::scalar(0.6).unwrap()), 201).unwrap();
    let data = f.sample_n(&[0.3], 300, &mut rng_from_seed(1));
    for z in &data {
        g.update_in_place(&f, z).unwrap();
        for i in 0..g.len() {
            if (g.target_point(i)[0] - 0.3).abs() < 0.15 {
                assert_eq!(g.log_weights()[i], f64::NEG_INFINITY);
            }
        }
    }
}

#[test]
fn refinement_converges() {
    let f = FamilySpec::bernoulli();
    let data = f.sample_n(&[0.3], 3, &mut rng_from_seed(3));
    let prior = PriorSpec::new(ParamBox::unit(1), Marginal::UniformBox, Conditional::GaussianConditional(vec![0.5])).unwrap();
    let belief = SourceBelief::Atom(ParamPoint::scalar(0.4).unwrap());
    let lp = |r: usize| {
        let mut g = induced_target_prior(&prior, &belief, r).unwrap();
        g.update_batch_in_place(&f, &data).unwrap();
        g.predictive_log_density(&f, &bit(1))
    };
    let k = data.iter().filter(|z| z.label() == 1).count() as u64;
    let w = |t: f64| (-0.5 * ((t - 0.4) / 0.5).powi(2)).exp() * common::seq(t, 3, k);
    let num = common::integrate(|t| t * w(t), 0.0, 1.0, 1e-16);
    let den = common::integrate(w, 0.0, 1.0, 1e-16);
    let oracle = (num / den).ln();
    let err: Vec<f64> = [25, 50, 100, 200, 400].iter().map(|&r| (lp(r) - oracle).abs()).collect();
    for w in err.windows(2) {
        assert!(w[1] <= w[0], "{err:?}");
    }
    assert!(err[4] < 1e-5, "{err:?}");
}

fn logistic_grid() -> (FamilySpec, GridPosterior) {
    let f = FamilySpec::logistic_standard();
    let prior = PriorSpec::new(ParamBox::unit(2), Marginal::UniformBox, Conditional::GaussianConditional(vec![0.1, 0.1])).unwrap();
    let g = induced_target_prior(&prior, &SourceBelief::Atom(ParamPoint::new(vec![0.2, 0.4]).unwrap()), 21).unwrap();
    (f, g)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sequential_equals_batch(seed in 0u64..1000, n in 1usize..60, c in 0.05f64..0.4) {
        let f = FamilySpec::bernoulli();
        let prior = PriorSpec::new(ParamBox::unit(1), Marginal::UniformBox, Conditional::BoxConditional(c)).unwrap();
        let g0 = induced_target_prior(&prior, &SourceBelief::Atom(ParamPoint::scalar(0.4).unwrap()), 101).unwrap();
        let data = f.sample_n(&[0.45], n, &mut rng_from_seed(seed));
        let mut seq = g0.clone();
        for z in &data {
            seq.update_in_place(&f, z).unwrap();
            prop_assert!(lse(seq.log_weights()).abs() < 1e-10);
            let mass = seq.predictive_log_density(&f, &bit(0)).exp() + seq.predictive_log_density(&f, &bit(1)).exp();
            prop_assert!((mass - 1.0).abs() < 1e-12);
        }
        let mut batch = g0;
        batch.update_batch_in_place(&f, &data).unwrap();
        for (a, b) in seq.log_weights().iter().zip(batch.log_weights()) {
            prop_assert!((a == b) || (a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn logistic_sequential_equals_batch(seed in 0u64..1000, n in 1usize..30) {
        let (f, g0) = logistic_grid();
        let data = f.sample_n(&[0.3, 0.5], n, &mut rng_from_seed(seed));
        let mut seq = g0.clone();
        for z in &data {
            seq.update_in_place(&f, z).unwrap();
            prop_assert!(lse(seq.log_weights()).abs() < 1e-10);
        }
        let mut batch = g0;
        batch.update_batch_in_place(&f, &data).unwrap();
        for (a, b) in seq.log_weights().iter().zip(batch.log_weights()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn cumulative_regret_telescopes(seed in 0u64..1000, n in 1usize..80) {
        let f = FamilySpec::bernoulli();
        let prior = PriorSpec::new(ParamBox::unit(1), Marginal::UniformBox, Conditional::BoxConditional(0.2)).unwrap();
        let g0 = induced_target_prior(&prior, &SourceBelief::Atom(ParamPoint::scalar(0.4).unwrap()), 101).unwrap();
        let truth = [0.35];
        let data = f.sample_n(&truth, n, &mut rng_from_seed(seed));
        let mut g = g0.clone();
        let (r, _) = sequential_regret(&f, &mut g, &data, &truth, &LossSpec::log()).unwrap();
        let total: f64 = r.iter().sum();
        // log Q(Dⁿ) as a single mixture over the prior grid.
        let terms: Vec<f64> = (0..g0.len()).map(|i| g0.log_weights()[i] + f.log_likelihood(g0.target_point(i), &data)).collect();
        let direct = f.log_likelihood(&truth, &data) - lse(&terms);
        prop_assert!((total - direct).abs() < 1e-9);
    }

    #[test]
    fn permutation_leaves_mixture_unchanged(bits in prop::collection::vec(0u8..2, 1..40), rot in 0usize..40) {
        let f = FamilySpec::bernoulli();
        let g0 = free_target_prior(Marginal::LinearPlusHalf, f.bounds(), 101).unwrap();
        let mut perm = bits.clone();
        let k = rot % perm.len();
        perm.rotate_left(k);
        perm.reverse();
        let log_q = |seq: &[u8]| {
            let mut g = g0.clone();
            let mut acc = 0.0;
            for &b in seq {
                acc += g.predictive_log_density(&f, &bit(b));
                g.update_in_place(&f, &bit(b)).unwrap();
            }
            acc
        };
        prop_assert!((log_q(&bits) - log_q(&perm)).abs() < 1e-10);
    }
}
