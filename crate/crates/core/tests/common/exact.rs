//! Exhaustive deterministic-policy enumeration on small finite priors.

use icpe::envs::{EnvModel, Family, PriorSpec};
use statrs::distribution::{ContinuousCDF, Normal};

/// A finite prior in plain numbers: weights, hypothesis per model and
/// per-model, per-arm cell probabilities.
pub struct Plain {
    pub w: Vec<f64>,
    pub hyp: Vec<usize>,
    pub n_hyp: usize,
    pub cp: Vec<Vec<Vec<f64>>>,
    pub k: usize,
    pub c: usize,
}

pub fn gaussian_cells(mean: f64, sd: f64, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let d = Normal::new(mean, sd).unwrap();
    let w = (hi - lo) / n as f64;
    let edge = |i: usize| if i == 0 { 0.0 } else if i == n { 1.0 } else { d.cdf(lo + w * i as f64) };
    (0..n).map(|i| edge(i + 1) - edge(i)).collect()
}

pub fn plain_gaussian(models: &[(Vec<f64>, f64, f64)], lo: f64, hi: f64, n: usize) -> Plain {
    let total: f64 = models.iter().map(|m| m.2).sum();
    let k = models[0].0.len();
    let hyp: Vec<usize> =
        models.iter().map(|m| (0..k).max_by(|&a, &b| m.0[a].partial_cmp(&m.0[b]).unwrap()).unwrap()).collect();
    Plain {
        w: models.iter().map(|m| m.2 / total).collect(),
        hyp,
        n_hyp: k,
        cp: models.iter().map(|m| m.0.iter().map(|&mu| gaussian_cells(mu, m.1, lo, hi, n)).collect()).collect(),
        k,
        c: n,
    }
}

pub fn spec_gaussian(models: &[(Vec<f64>, f64, f64)]) -> PriorSpec {
    let k = models[0].0.len();
    let upper = models.iter().flat_map(|m| m.0.iter().cloned()).fold(0.0, f64::max);
    let fam = Family::GaussianMinGap { k, sigma: models[0].1, delta0: 0.0, upper };
    PriorSpec::finite(fam, models.iter().map(|m| (EnvModel::gaussian(m.0.clone(), m.1).unwrap(), m.2)).collect())
        .unwrap()
}

/// Best value over every deterministic policy, by enumerating all of them.
/// A policy assigns an action to each cell-sequence prefix shorter than `n`.
pub fn brute_force(p: &Plain, n: usize) -> f64 {
    let nodes: usize = (0..n).map(|t| p.c.pow(t as u32)).sum();
    let offset = |t: usize| -> usize { (0..t).map(|s| p.c.pow(s as u32)).sum() };
    let mut policy = vec![0usize; nodes];
    let mut best = f64::NEG_INFINITY;
    loop {
        let mut value = 0.0;
        for leaf in 0..p.c.pow(n as u32) {
            let mut joint = p.w.clone();
            let mut idx = 0;
            for t in 0..n {
                let cell = (leaf / p.c.pow((n - 1 - t) as u32)) % p.c;
                let a = policy[offset(t) + idx];
                for (m, j) in joint.iter_mut().enumerate() {
                    *j *= p.cp[m][a][cell];
                }
                idx = idx * p.c + cell;
            }
            let mut by_h = vec![0.0; p.n_hyp];
            for (m, j) in joint.iter().enumerate() {
                by_h[p.hyp[m]] += j;
            }
            value += by_h.iter().cloned().fold(0.0, f64::max);
        }
        best = best.max(value);
        // odometer over policies
        let mut i = 0;
        loop {
            if i == nodes {
                return best;
            }
            policy[i] += 1;
            if policy[i] < p.k {
                break;
            }
            policy[i] = 0;
            i += 1;
        }
    }
}

