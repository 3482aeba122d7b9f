//! Posterior updates against a plain density-product oracle.

use icpe::core::{Action, Observation};
use icpe::envs::PriorSpec;
use icpe::exact::ExactProblem;
use icpe::posterior::{posterior_predictive, posterior_update, ObsGrid};
use icpe::rng::RandomSource;
use proptest::prelude::*;

mod common;
use common::posterior::{deterministic_models, history, Instance};

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).max_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap()).unwrap()
}

#[test]
fn matches_density_product() {
    let mut rng = RandomSource::new(31);
    for _ in 0..100 {
        let inst = Instance::random(&mut rng);
        let k = inst.means[0].len();
        let truth = rng.below(inst.means.len());
        let steps: Vec<(usize, f64)> = (0..rng.below(7))
            .map(|_| {
                let a = rng.below(k);
                (a, rng.normal(inst.means[truth][a], inst.sds[truth]))
            })
            .collect();
        let post = posterior_update(&inst.spec(), &history(&steps)).unwrap();
        let want = inst.oracle(&steps);
        for (got, w) in post.model_weights.iter().zip(&want) {
            assert!((got - w).abs() < 1e-9, "{got} vs {w}");
        }
        let mut hyp = vec![0.0; k];
        for (m, w) in want.iter().enumerate() {
            hyp[argmax(&inst.means[m])] += w;
        }
        for (got, w) in post.hyp_probs.iter().zip(&hyp) {
            assert!((got - w).abs() < 1e-9);
        }
    }
}

#[test]
fn deterministic_likelihood_kills_inconsistent_models() {
    let spec = PriorSpec::two_model_det();
    let post = posterior_update(&spec, &history(&[(0, 1.0)])).unwrap();
    assert_eq!(post.hyp_probs, vec![1.0, 0.0]);
}

#[test]
fn posterior_is_a_martingale_on_finite_alphabets() {
    let mut rng = RandomSource::new(32);
    let grid = ObsGrid::Points(vec![0.0, 0.5, 1.0]);
    for _ in 0..50 {
        let k = 2 + rng.below(3);
        let means = deterministic_models(k, 2 + rng.below(5), &mut rng);
        let spec = PriorSpec::deterministic_models(&means).unwrap();
        let truth = rng.below(means.len());
        let steps: Vec<(usize, f64)> = (0..rng.below(3))
            .map(|_| {
                let a = rng.below(k);
                (a, means[truth][a])
            })
            .collect();
        let h = history(&steps);
        let now = posterior_update(&spec, &h).unwrap().hyp_probs;
        for a in 0..k {
            let pred = posterior_predictive(&spec, &h, Action::Query(a), &grid).unwrap();
            let mut avg = vec![0.0; now.len()];
            for (c, &p) in pred.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let next = h.append(Action::Query(a), Observation::scalar(grid.representative(c))).unwrap();
                let q = posterior_update(&spec, &next).unwrap().hyp_probs;
                avg.iter_mut().zip(&q).for_each(|(s, x)| *s += p * x);
            }
            for (x, y) in avg.iter().zip(&now) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn quantized_posterior_is_a_martingale() {
    let mut rng = RandomSource::new(33);
    for _ in 0..30 {
        let inst = Instance::random(&mut rng);
        let p = ExactProblem::new(&inst.spec(), &ObsGrid::cells(-1.0, 2.0, 5)).unwrap();
        let key: Vec<(u16, u16)> = (0..rng.below(4)).map(|_| (rng.below(p.k) as u16, rng.below(5) as u16)).collect();
        let post = p.posterior_of(&key);
        let now = p.hyp_probs(&post);
        for a in 0..p.k {
            let pred = p.predictive(&post, a);
            let mut avg = vec![0.0; now.len()];
            for (c, &pc) in pred.iter().enumerate() {
                let mut next = key.clone();
                next.push((a as u16, c as u16));
                let q = p.hyp_probs(&p.posterior_of(&next));
                avg.iter_mut().zip(&q).for_each(|(s, x)| *s += pc * x);
            }
            for (x, y) in avg.iter().zip(&now) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }
}

proptest! {
    #[test]
    fn hypothesis_posterior_is_a_distribution(seed in 0u64..10_000, n in 0usize..8) {
        let mut rng = RandomSource::new(seed);
        let inst = Instance::random(&mut rng);
        let k = inst.means[0].len();
        let steps: Vec<(usize, f64)> = (0..n).map(|_| (rng.below(k), rng.uniform_in(-2.0, 3.0))).collect();
        let post = posterior_update(&inst.spec(), &history(&steps)).unwrap();
        prop_assert!((post.hyp_probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(post.hyp_probs.iter().all(|&p| p >= 0.0));
    }
}
