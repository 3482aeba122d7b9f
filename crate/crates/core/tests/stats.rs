//! Bootstrap, survival curves and the sequential certification test.

use icpe::cert::{hoeffding_lower, seq_boundary, seq_observe, SeqTestState};
use icpe::rng::RandomSource;
use icpe::stats::{flat_bootstrap, hierarchical_bootstrap, survival_curve, Metric};
use proptest::prelude::*;

mod common;
use common::stats::{bootstrap_expectation, mean_bootstrap_variance, metric, null_trigger_rate, random_effects};

#[test]
fn hierarchical_variance_tracks_resampling_expectation() {
    let analytic: f64 = 1.0 / 2.0 + 1.0 / 6.0 + 1.0 / 24.0;
    assert!((analytic - 0.708_333_333_333).abs() < 1e-9);
    let got = mean_bootstrap_variance(1000, 40);
    let expected = bootstrap_expectation(2.0, 3.0, 4.0);
    eprintln!("mean bootstrap variance {got:.4}, resampling expectation {expected:.4}, analytic {analytic:.4}");
    assert!((got - expected).abs() < 0.1 * expected);
}

#[test]
fn flat_bootstrap_understates_seed_variance() {
    let mut rng = RandomSource::new(41);
    let mut wins = 0;
    for _ in 0..20 {
        let d = random_effects(5, 4, 5, [2.0, 0.5, 0.5], &mut rng);
        let h = hierarchical_bootstrap(&d, &metric(), 500, &mut rng).unwrap();
        let f = flat_bootstrap(&d, &metric(), 500, &mut rng).unwrap();
        wins += (f.replicate_var <= h.replicate_var) as usize;
    }
    assert_eq!(wins, 20);
}

#[test]
fn identical_values_give_a_point_interval() {
    let mut rng = RandomSource::new(42);
    let mut d = random_effects(3, 2, 2, [1.0; 3], &mut rng);
    for t in d.seeds.iter_mut().flat_map(|s| s.envs.iter_mut()).flat_map(|e| e.trajectories.iter_mut()) {
        t.tau = 7;
    }
    let ci = hierarchical_bootstrap(&d, &Metric::Tau, 200, &mut rng).unwrap();
    assert_eq!((ci.mean, ci.ci_low, ci.ci_high), (7.0, 7.0, 7.0));
}

#[test]
fn survival_matches_ecdf() {
    let mut rng = RandomSource::new(43);
    for _ in 0..20 {
        let taus: Vec<usize> = (0..1 + rng.below(200)).map(|_| rng.below(30)).collect();
        let grid: Vec<usize> = (0..35).collect();
        let s = survival_curve(&taus, &grid).unwrap();
        let mut sorted = taus.clone();
        sorted.sort();
        for (&t, &v) in grid.iter().zip(&s) {
            let at_most = sorted.partition_point(|&x| x <= t);
            assert!((v - (1.0 - at_most as f64 / taus.len() as f64)).abs() < 1e-12);
        }
        assert!(s.windows(2).all(|w| w[1] <= w[0]));
    }
    assert!(survival_curve(&[], &[1]).is_err());
}

#[test]
fn boundary_values() {
    // Independent evaluation of the same closed form.
    let (dp, eta, b) = (0.1f64, 0.05f64, 64.0f64);
    let v = 1.0 + (1.0 - dp) / b;
    let direct = (1.0 - dp) + (2.0 * v * (v.sqrt() / eta).ln()).sqrt();
    assert!((seq_boundary(1, 64, dp, eta) - direct).abs() < 1e-12);
    let mut last = f64::INFINITY;
    for t in (1..5000).step_by(7) {
        let x = seq_boundary(t, 64, 0.1, 0.05);
        assert!(x > 0.9 && x < last);
        assert!(seq_boundary(t, 64, 0.1, 0.1) < x);
        last = x;
    }
}

#[test]
fn all_ones_trigger_epoch() {
    let mut s = SeqTestState::new(0.1, 0.05, 64);
    let first = (1..1000).find(|_| seq_observe(&mut s, 1.0));
    assert_eq!(first, Some(31));
    assert_eq!(s.triggered_at, Some(31));
}

#[test]
fn null_calibration() {
    let rate = null_trigger_rate(2000, 500, 64, 44);
    let limit = 0.05 + 2.0 * (0.05f64 * 0.95 / 2000.0).sqrt();
    assert!(rate <= limit, "trigger rate {rate} > {limit}");
}

#[test]
fn hoeffding_is_below_the_estimate() {
    for n in [1, 10, 1000] {
        for s in [0, n / 2, n] {
            assert!(hoeffding_lower(s, n, 0.95).unwrap() <= s as f64 / n as f64);
        }
    }
    let l = hoeffding_lower(1000, 1000, 0.95).unwrap();
    assert!((l - 0.9613).abs() < 1e-4);
}

proptest! {
    #[test]
    fn survival_is_non_increasing(taus in proptest::collection::vec(0usize..50, 1..100)) {
        let grid: Vec<usize> = (0..60).collect();
        let s = survival_curve(&taus, &grid).unwrap();
        prop_assert!(s[0] <= 1.0);
        prop_assert!(s.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn boundary_exceeds_target(t in 1usize..100_000, b in 1usize..256) {
        prop_assert!(seq_boundary(t, b, 0.1f64, 0.05) > 0.9);
    }
}
