use std::f64::consts::{E, PI};

use bayestl::bounds::*;
use bayestl::rng::rng_from_seed;
use bayestl::FamilySpec;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn spd(d: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    &a * a.transpose() + DMatrix::identity(d, d) * 0.5
}

fn chol_log_det(m: &DMatrix<f64>) -> f64 {
    let l = m.clone().cholesky().unwrap().unpack();
    2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

#[test]
fn block_examples() {
    let f = FamilySpec::bernoulli();
    let none = fisher_blocks(&f, &[0.4], &[0.3], 0).unwrap();
    assert_eq!(none.delta_s.nrows(), 0);
    assert!((none.i_t[(0, 0)] - 1.0 / 0.21).abs() < 1e-12);

    let full = fisher_blocks(&f, &[0.4], &[0.3], 1).unwrap();
    assert_eq!(full.i_t.nrows(), 0);
    assert!((full.delta_s[(0, 0)] - 1.0 / 0.24).abs() < 1e-12);
    assert!((full.delta_t[(0, 0)] - 1.0 / 0.21).abs() < 1e-12);

    // Two independent Bernoulli coordinates with the first shared.
    let fi = |t: f64| 1.0 / (t * (1.0 - t));
    let (s, t) = ([0.4, 0.7], [0.3, 0.6]);
    let src = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(s.iter().map(|v| fi(*v)).collect()));
    let tgt = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(t.iter().map(|v| fi(*v)).collect()));
    let b = FisherBlocks::from_matrices(&src, &tgt, 1).unwrap();
    assert!((b.i_cs[(0, 0)] - fi(0.4)).abs() < 1e-12);
    assert!((b.i_s[(0, 0)] - fi(0.7)).abs() < 1e-12);
    assert!((b.i_ct[(0, 0)] - fi(0.3)).abs() < 1e-12);
    assert!((b.i_t[(0, 0)] - fi(0.6)).abs() < 1e-12);
    assert_eq!(b.i_cs_cross[(0, 0)], 0.0);
    assert!((b.delta_s[(0, 0)] - fi(0.4)).abs() < 1e-12);

    let singular = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
    assert!(FisherBlocks::from_matrices(&singular, &singular, 1).is_err());
}

#[test]
fn scalar_asymptote_arithmetic() {
    let e = otl_asymptote_scalar(500.0, 4.5, 5.0).unwrap();
    let direct = 0.5 * (500.0 / (2.0 * PI * E)).ln() + 0.5 * 4.5f64.ln() - 5f64.ln();
    assert!((e.total - direct).abs() < 1e-12);
    assert!((e.total - 0.83095).abs() < 1e-4);
    let sum = e.log_n_coefficient * 500f64.ln() + e.constant_term + e.prior_term + e.source_correction;
    assert!((e.total - sum).abs() < 1e-12);

    let c = otl_asymptote_scalar(2.0 * PI * E, 4.5, 1.0).unwrap();
    assert!((c.total - 0.5 * 4.5f64.ln()).abs() < 1e-12);

    let z = otl_asymptote_scalar(500.0, 4.5, 0.0).unwrap();
    assert!(z.improper && z.total.is_infinite());

    let free = otl_asymptote_scalar(500.0, 4.5, 1.0).unwrap();
    assert!((free.total - e.total - (1.0f64 / 5.0).ln().abs()).abs() < 1e-12);
    assert!(otl_asymptote_scalar(0.5, 4.5, 1.0).is_err());
}

#[test]
fn general_asymptote_edges() {
    let mut rng = rng_from_seed(31);
    let (s, t) = (spd(3, &mut rng), spd(3, &mut rng));
    let none = FisherBlocks::from_matrices(&s, &t, 0).unwrap();
    let e = otl_asymptote_general(200.0, 50.0, &none, 3, 0, 2.0).unwrap();
    assert_eq!(e.source_correction, 0.0);
    let direct = 0.5 * chol_log_det(&(&t * 200.0)) - 1.5 * (2.0 * PI * E).ln() - 2f64.ln();
    assert!((e.total - direct).abs() < 1e-10);

    let full = FisherBlocks::from_matrices(&s, &t, 3).unwrap();
    let e = otl_asymptote_general(200.0, 50.0, &full, 3, 3, 2.0).unwrap();
    assert_eq!(e.log_n_coefficient, 0.0);
    assert_eq!(e.constant_term, 0.0);
    assert!(e.source_correction > 0.0);
    assert!(otl_asymptote_general(200.0, 50.0, &full, 3, 1, 2.0).is_err());
}

#[test]
fn rate_examples() {
    assert!((otl_rate(2, 1, 2.0, 100.0) - (0.01 + 100f64.ln())).abs() < 1e-12);
    assert!((otl_rate(2, 1, 2.0, 100.0) - 4.615).abs() < 1e-3);
    assert!((otl_rate(3, 2, 1.0, 1e6) - (2.0 + 1e6f64.ln())).abs() < 1e-9);
    for p in [0.0, 0.5, 1.0, 3.0] {
        assert!((otl_rate(4, 0, p, 50.0) - 4.0 * 50f64.ln()).abs() < 1e-12);
    }
    assert!((itl_rate(1, 0, 0.3, 40.0) - 1.0 / 40.0).abs() < 1e-15);
    assert!((itl_rate(3, 3, 2.0, 40.0) - 3.0 / 1600.0).abs() < 1e-15);
    assert!((itl_rate(3, 1, 0.5, 100.0) - 0.03).abs() < 1e-15);
}

#[test]
fn tvtl_examples() {
    let term = |n: f64, j, c, w| TvtlTerm { n, j, c, prior_density: w };
    let v = tvtl_bound(&[term(100.0, 1, 1, 1.0), term(100.0, 1, 1, 1.0)], 3, 1.0).unwrap();
    assert!((v - (400.0 * (4.0 + 100f64.ln())).sqrt()).abs() < 1e-10);
    assert!((v - 58.67).abs() < 5e-3);

    let one = tvtl_bound(&[term(80.0, 0, 0, 0.5)], 2, 1.0).unwrap();
    assert!((one - (80.0 * (2.0 * 80f64.ln() + 4.0)).sqrt()).abs() < 1e-10);
    let doubled = tvtl_bound(&[term(80.0, 0, 0, 1.0)], 2, 1.0).unwrap();
    assert!(doubled < one);
    assert!(tvtl_bound(&[term(80.0, 0, 0, 0.0)], 2, 1.0).unwrap().is_infinite());
    assert!(tvtl_bound(&[term(80.0, 2, 1, 1.0)], 2, 1.0).is_err());
}

#[test]
fn negative_floor_is_n_kl() {
    let kl = FamilySpec::bernoulli().kl_divergence(&[0.6], &[0.8]);
    assert!((negative_floor(100.0, kl).unwrap() - 10.4650).abs() < 1e-4);
    assert!(negative_floor(100.0, -0.1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn general_reduces_to_scalar(n in 1.0f64..1e6, fisher in 0.01f64..100.0, dens in 0.01f64..50.0) {
        let m = DMatrix::from_element(1, 1, fisher);
        let b = FisherBlocks::from_matrices(&m, &m, 0).unwrap();
        let g = otl_asymptote_general(n, f64::INFINITY, &b, 1, 0, dens).unwrap();
        let s = otl_asymptote_scalar(n, fisher, dens).unwrap();
        prop_assert!((g.total - s.total).abs() < 1e-12);
    }

    #[test]
    fn block_determinant_identity(seed in 0u64..100_000, d in 1usize..5, jf in 0.0f64..1.0, n in 1.0f64..1e4, m in 1.0f64..1e4) {
        let j = ((d + 1) as f64 * jf).floor().min(d as f64) as usize;
        let mut rng = rng_from_seed(seed);
        let (s, t) = (spd(d, &mut rng), spd(d, &mut rng));
        let b = FisherBlocks::from_matrices(&s, &t, j).unwrap();
        for (delta, full) in [(&b.delta_s, &s), (&b.delta_t, &t)] {
            let sym = (delta - delta.transpose()).abs().max();
            prop_assert!(sym < 1e-10);
            let own = full.view((j, j), (d - j, d - j)).into_owned();
            if j > 0 {
                let lhs = chol_log_det(full);
                let rhs = chol_log_det(delta) + if d > j { chol_log_det(&own) } else { 0.0 };
                prop_assert!((lhs - rhs).abs() < 1e-8);
            }
        }
        let lhs = chol_log_det(&b.joint_information(n, m)) - chol_log_det(&b.source_information(m));
        let i_t_n = &b.i_t * n;
        let rhs = if d > j { chol_log_det(&i_t_n) } else { 0.0 } + 2.0 * b.source_correction(n, m).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-8 * lhs.abs().max(1.0));
    }

    #[test]
    fn otl_rate_non_increasing_in_p(d in 1usize..6, jf in 0.0f64..1.0, p in 0.0f64..3.0, dp in 0.0f64..1.0, n in 2.0f64..1e6) {
        let j = (d as f64 * jf).floor() as usize;
        prop_assert!(otl_rate(d, j, p + dp, n) <= otl_rate(d, j, p, n) + 1e-12);
    }

    #[test]
    fn itl_rate_reductions(n in 1.0f64..1e6, p in 0.0f64..3.0) {
        prop_assert!((itl_rate(1, 0, p, n) - 1.0 / n).abs() < 1e-15);
        prop_assert!((itl_rate(2, 2, p, n) - 2.0 / n.max(n.powf(p))).abs() < 1e-15);
        prop_assert!(itl_rate(2, 2, p, n) <= itl_rate(2, 0, p, n) + 1e-15);
    }
}
