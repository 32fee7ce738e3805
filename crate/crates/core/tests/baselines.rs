mod common;

use bayestl::baselines::*;
use bayestl::rng::rng_from_seed;
use bayestl::{FamilySpec, Observation, ParamPoint};
use proptest::prelude::*;

fn obs(x: Vec<f64>, y: u8) -> Observation {
    Observation::Labeled { x, y }
}

fn state(theta_s: [f64; 2], theta_t: [f64; 2]) -> HomOtlState {
    HomOtlState::new(ParamPoint::new(theta_s.to_vec()).unwrap(), theta_t.to_vec(), 0.01, HomOtlVariant::CrossEntropy).unwrap()
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[test]
fn equal_losses_keep_weights() {
    let s = state([0.4, 0.1], [0.4, 0.1]).with_weights(0.3, 0.7).unwrap();
    let next = homotl_step(&s, &obs(vec![2.0, -1.0], 0)).unwrap();
    assert!((next.w_s - 0.3).abs() < 1e-15);
}

#[test]
fn dominated_source_weight_decays() {
    let mut s = state([-1.0, 1.0], [1.0, -1.0]);
    s.eta = 0.0;
    let mut last = s.w_s;
    for _ in 0..30 {
        homotl_step_in_place(&mut s, &obs(vec![3.0, -3.0], 1)).unwrap();
        assert!(s.w_s < last);
        last = s.w_s;
    }
    assert!(last < 1e-30);
}

#[test]
fn prediction_examples() {
    let s = state([0.8, 0.15], [0.0, 0.0]).with_weights(1.0, 0.0).unwrap();
    let x = [1.5, -0.5];
    assert!((homotl_predict(&s, &x).prob_one - sigmoid(0.8 * 1.5 - 0.15 * 0.5)).abs() < 1e-15);
    let tie = state([0.0, 0.0], [0.0, 0.0]);
    let p = homotl_predict(&tie, &x);
    assert_eq!((p.label, p.prob_one), (0, 0.5));
    assert!(state([0.0, 0.0], [0.0, 0.0]).with_weights(0.0, 0.0).is_err());
    assert!(homotl_step(&tie, &Observation::Bit(1)).is_err());
}

#[test]
fn zero_source_weight_is_plain_gradient_descent() {
    let f = FamilySpec::logistic_standard();
    let data = f.sample_n(&[0.3, 0.5], 150, &mut rng_from_seed(21));
    let mut s = state([0.8, 0.15], [0.0, 0.0]).with_weights(0.0, 1.0).unwrap();
    let mut w = [0.0f64, 0.0];
    for z in &data {
        let x = z.covariates().unwrap();
        let ogd = sigmoid(w[0] * x[0] + w[1] * x[1]);
        let p = homotl_predict(&s, x);
        assert_eq!(s.w_s, 0.0);
        assert!((p.prob_one - ogd).abs() < 1e-15);
        let g = ogd - f64::from(z.label());
        w[0] -= 0.01 * g * x[0];
        w[1] -= 0.01 * g * x[1];
        homotl_step_in_place(&mut s, z).unwrap();
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn simplex_and_frozen_source(seed in 0u64..10_000, ws in 0.0f64..=1.0, n in 1usize..80, hinge in any::<bool>()) {
        let f = FamilySpec::logistic_standard();
        let variant = if hinge { HomOtlVariant::HingeSquared } else { HomOtlVariant::CrossEntropy };
        let theta_s = ParamPoint::new(vec![0.8, 0.15]).unwrap();
        let mut s = HomOtlState::new(theta_s.clone(), vec![0.0, 0.0], 0.01, variant).unwrap().with_weights(ws, 1.0 - ws).unwrap();
        let bits: Vec<u64> = theta_s.coords().iter().map(|v| v.to_bits()).collect();
        for z in f.sample_n(&[0.3, 0.5], n, &mut rng_from_seed(seed)) {
            homotl_step_in_place(&mut s, &z).unwrap();
            prop_assert!((s.w_s + s.w_t - 1.0).abs() < 1e-12);
            prop_assert!(s.w_s >= 0.0 && s.w_t >= 0.0);
            let now: Vec<u64> = s.theta_s.coords().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(&now, &bits);
        }
    }
}
