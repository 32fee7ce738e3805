use bayestl::family::{bernoulli_kl, CovariateModel};
use bayestl::rng::rng_from_seed;
use bayestl::{FamilySpec, Observation, ParamBox, ParamPoint};
use proptest::prelude::*;

fn bit(b: u8) -> Observation {
    Observation::Bit(b)
}

#[test]
fn bernoulli_values() {
    let f = FamilySpec::bernoulli();
    assert!((f.log_density(&[0.5], &bit(1)) + 0.693147).abs() < 1e-6);
    assert_eq!(f.log_density(&[0.0], &bit(1)), f64::NEG_INFINITY);
    assert!((f.kl_divergence(&[0.6], &[0.8]) - 0.104650).abs() < 1e-6);
    assert!((f.kl_divergence(&[1.0 / 3.0], &[0.4]) - 0.0094665).abs() < 1e-7);
    assert_eq!(f.kl_divergence(&[0.3], &[0.3]), 0.0);
    assert!(f.kl_divergence(&[0.5], &[0.0]).is_infinite());
    assert!(f.fisher_information(&[1.0]).is_err());
    assert!(f.grad_log_density(&[1.0], &bit(0)).is_err());
}

#[test]
fn finite_difference_gradient_at_one_third() {
    let f = FamilySpec::bernoulli();
    let h = 1e-6;
    let t = 1.0 / 3.0;
    let fd = (f.log_density(&[t + h], &bit(0)) - f.log_density(&[t - h], &bit(0))) / (2.0 * h);
    assert!((fd + 1.5).abs() < 1e-6);
    assert!((f.grad_log_density(&[t], &bit(0)).unwrap()[0] + 1.5).abs() < 1e-12);
}

#[test]
fn bernoulli_sample_mean() {
    let f = FamilySpec::bernoulli();
    let mut rng = rng_from_seed(42);
    let n = 1_000_000;
    let ones = f.sample_n(&[0.6], n, &mut rng).iter().filter(|z| z.label() == 1).count();
    assert!((ones as f64 / n as f64 - 0.6).abs() < 0.002);
}

#[test]
fn sampling_is_seeded() {
    let f = FamilySpec::logistic_standard();
    assert_eq!(f.sample_seeded(&[0.3, 0.5], 9), f.sample_seeded(&[0.3, 0.5], 9));
    let a = f.sample_n(&[0.3, 0.5], 5, &mut rng_from_seed(1));
    let b = f.sample_n(&[0.3, 0.5], 5, &mut rng_from_seed(2));
    assert_ne!(a, b);
}

#[test]
fn logistic_fisher_at_origin_is_quarter_second_moment() {
    let f = FamilySpec::logistic_standard();
    let fisher = f.fisher_information(&[0.0, 0.0]).unwrap();
    // E[xxᵀ] for x ~ N((5,-5), I).
    let second = [[26.0, -25.0], [-25.0, 26.0]];
    for i in 0..2 {
        for j in 0..2 {
            let expect = 0.25 * second[i][j];
            assert!((fisher[(i, j)] - expect).abs() <= 0.01 * expect.abs(), "{i}{j}");
        }
    }
    let z = Observation::Labeled { x: vec![0.7, -2.0], y: 1 };
    assert!((f.log_density(&[0.0, 0.0], &z) - 0.5f64.ln()).abs() < 1e-15);
}

#[test]
fn logistic_kl_is_seeded_and_nonnegative() {
    let f = FamilySpec::logistic_standard();
    let a = f.kl_divergence_mc(&[0.3, 0.5], &[0.2, 0.4], 20_000, 3);
    assert_eq!(a, f.kl_divergence_mc(&[0.3, 0.5], &[0.2, 0.4], 20_000, 3));
    assert!(a > 0.0);
    assert_eq!(f.kl_divergence(&[0.3, 0.5], &[0.3, 0.5]), 0.0);
}

#[test]
fn source_estimates() {
    let f = FamilySpec::bernoulli();
    let data: Vec<_> = [1, 0, 1, 1].into_iter().map(bit).collect();
    assert_eq!(f.mle(&data).unwrap(), (ParamPoint::scalar(0.75).unwrap(), false));
    let (p, guarded) = f.mle(&[bit(1), bit(1)]).unwrap();
    assert!(guarded);
    assert_eq!(p.coords(), &[0.75]);

    let mut rng = rng_from_seed(5);
    let big = f.sample_n(&[0.35], 100_000, &mut rng);
    assert!((f.mle(&big).unwrap().0.coords()[0] - 0.35).abs() < 0.005);

    let lf = FamilySpec::logistic_standard();
    let src = lf.sample_n(&[0.2, 0.4], 5000, &mut rng_from_seed(11));
    let est = lf.mle(&src).unwrap().0;
    for (e, t) in est.coords().iter().zip([0.2, 0.4]) {
        assert!((e - t).abs() < 0.05, "{est:?}");
    }
}

#[test]
fn invalid_families_are_rejected() {
    assert!(FamilySpec::bernoulli_on(-0.1, 0.5).is_err());
    let cov = CovariateModel { mean: vec![0.0, 0.0], std: vec![1.0, 0.0] };
    assert!(FamilySpec::logistic(ParamBox::unit(2), cov).is_err());
    let cov = CovariateModel { mean: vec![0.0], std: vec![1.0] };
    assert!(FamilySpec::logistic(ParamBox::unit(2), cov).is_err());
    assert!(ParamPoint::new(vec![f64::NAN]).is_err());
    assert!(FamilySpec::bernoulli().point(vec![1.5]).is_err());
}

fn kl_hessian(t: f64) -> f64 {
    let h = 1e-4;
    (bernoulli_kl(t, t + h) - 2.0 * bernoulli_kl(t, t) + bernoulli_kl(t, t - h)) / (h * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn bernoulli_gradient_matches_finite_difference(t in 0.02f64..0.98, y in 0u8..2) {
        let f = FamilySpec::bernoulli();
        let h = 1e-6;
        let fd = (f.log_density(&[t + h], &bit(y)) - f.log_density(&[t - h], &bit(y))) / (2.0 * h);
        let g = f.grad_log_density(&[t], &bit(y)).unwrap()[0];
        prop_assert!((fd - g).abs() <= 1e-5 * g.abs());
    }

    #[test]
    fn logistic_gradient_matches_finite_difference(t0 in 0.01f64..0.99, t1 in 0.01f64..0.99, x0 in -3.0f64..3.0, x1 in -3.0f64..3.0, y in 0u8..2) {
        let f = FamilySpec::logistic(ParamBox::unit(2), CovariateModel { mean: vec![0.0, 0.0], std: vec![1.0, 1.0] }).unwrap();
        let z = Observation::Labeled { x: vec![x0, x1], y };
        let g = f.grad_log_density(&[t0, t1], &z).unwrap();
        let h = 1e-6;
        for k in 0..2 {
            let mut up = vec![t0, t1];
            let mut dn = vec![t0, t1];
            up[k] += h;
            dn[k] -= h;
            let fd = (f.log_density(&up, &z) - f.log_density(&dn, &z)) / (2.0 * h);
            prop_assert!((fd - g[k]).abs() <= 1e-5 * g[k].abs().max(1e-3));
        }
    }

    #[test]
    fn fisher_is_kl_hessian(t in 0.05f64..0.95) {
        let f = FamilySpec::bernoulli();
        let fisher = f.fisher_information(&[t]).unwrap()[(0, 0)];
        prop_assert!((kl_hessian(t) - fisher).abs() <= 1e-3 * fisher);
    }

    #[test]
    fn kl_nonnegative_and_zero_on_diagonal(a in 0.0f64..=1.0, b in 0.001f64..0.999) {
        let kl = bernoulli_kl(a, b);
        prop_assert!(kl >= -1e-12);
        prop_assert_eq!(bernoulli_kl(b, b), 0.0);
        if (a - b).abs() > 1e-3 {
            prop_assert!(kl > 0.0);
        }
    }

    #[test]
    fn bernoulli_masses_sum_to_one(t in 0.0f64..=1.0) {
        let f = FamilySpec::bernoulli();
        let s = f.log_density(&[t], &bit(0)).exp() + f.log_density(&[t], &bit(1)).exp();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }
}
