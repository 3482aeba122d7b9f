//! Synthetic data for the bootstrap and the sequential test.

use std::collections::BTreeMap;

use icpe::cert::{seq_observe, SeqTestState};
use icpe::rng::RandomSource;
use icpe::stats::{hierarchical_bootstrap, EnvRecord, Metric, NestedResults, SeedRecord, TrajectoryRecord};

pub fn metric() -> Metric {
    Metric::Extra("y".into())
}

/// Random-effects data: seed, environment and trajectory effects with the given sds.
pub fn random_effects(m: usize, k: usize, n: usize, sd: [f64; 3], rng: &mut RandomSource) -> NestedResults {
    let seeds = (0..m)
        .map(|s| {
            let a = rng.normal(0.0, sd[0]);
            let envs = (0..k)
                .map(|e| {
                    let b = rng.normal(0.0, sd[1]);
                    let trajectories = (0..n)
                        .map(|j| {
                            let y = a + b + rng.normal(0.0, sd[2]);
                            TrajectoryRecord { id: j as u64, correct: y > 0.0, tau: 1, extra: BTreeMap::from([("y".into(), y)]) }
                        })
                        .collect();
                    EnvRecord { id: e as u64, trajectories }
                })
                .collect();
            SeedRecord { id: s as u64, envs }
        })
        .collect();
    NestedResults { seeds }
}

/// Expected replicate variance of the three-stage bootstrap: each level's
/// spread enters with its plug-in `(n-1)/n` factor.
pub fn bootstrap_expectation(m: f64, k: f64, n: f64) -> f64 {
    let seed_mean_var = 1.0 + 1.0 / k + 1.0 / (k * n);
    let env_mean_var = 1.0 + 1.0 / n;
    (m - 1.0) / m * seed_mean_var / m + (k - 1.0) / k * env_mean_var / (m * k) + (n - 1.0) / n / (m * k * n)
}

/// Mean bootstrap variance over `meta` independent data sets.
pub fn mean_bootstrap_variance(meta: usize, seed: u64) -> f64 {
    let mut rng = RandomSource::new(seed);
    (0..meta)
        .map(|_| {
            let d = random_effects(2, 3, 4, [1.0; 3], &mut rng);
            hierarchical_bootstrap(&d, &metric(), 1000, &mut rng).unwrap().replicate_var
        })
        .sum::<f64>()
        / meta as f64
}

/// Trigger rate under the null `p_t = 1 - delta'` with batches of `b` Bernoulli draws.
pub fn null_trigger_rate(runs: usize, epochs: usize, b: usize, seed: u64) -> f64 {
    let mut rng = RandomSource::new(seed);
    let mut hits = 0;
    for _ in 0..runs {
        let mut s = SeqTestState::new(0.1, 0.05, b);
        for _ in 0..epochs {
            let x = (0..b).filter(|_| rng.bernoulli(0.9)).count() as f64 / b as f64;
            if seq_observe(&mut s, x) {
                hits += 1;
                break;
            }
        }
    }
    hits as f64 / runs as f64
}

