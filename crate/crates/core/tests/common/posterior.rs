//! Finite Gaussian instances with a density-product posterior oracle.

use icpe::core::{Action, History, Observation};
use icpe::envs::{EnvModel, Family, PriorSpec};
use icpe::rng::RandomSource;

pub struct Instance {
    pub means: Vec<Vec<f64>>,
    pub sds: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Instance {
    pub fn random(rng: &mut RandomSource) -> Self {
        let k = 2 + rng.below(4);
        let m = 2 + rng.below(5);
        let means = (0..m).map(|_| (0..k).map(|_| rng.uniform_in(-1.0, 2.0)).collect()).collect();
        let sds = (0..m).map(|_| rng.uniform_in(0.3, 1.5)).collect();
        let weights = (0..m).map(|_| rng.uniform_in(0.1, 1.0)).collect();
        Self { means, sds, weights }
    }

    pub fn spec(&self) -> PriorSpec {
        let k = self.means[0].len();
        let fam = Family::GaussianMinGap { k, sigma: 1.0, delta0: 0.0, upper: 2.0 };
        let models = self
            .means
            .iter()
            .zip(&self.sds)
            .zip(&self.weights)
            .map(|((mu, &sd), &w)| (EnvModel::gaussian(mu.clone(), sd).unwrap(), w))
            .collect();
        PriorSpec::finite(fam, models).unwrap()
    }

    /// Prior times the product of Gaussian densities, normalized.
    pub fn oracle(&self, steps: &[(usize, f64)]) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.means.len())
            .map(|m| {
                let sd = self.sds[m];
                steps.iter().fold(self.weights[m], |acc, &(a, x)| {
                    let z = (x - self.means[m][a]) / sd;
                    acc * (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
                })
            })
            .collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|r| r / s).collect()
    }
}

pub fn history(steps: &[(usize, f64)]) -> History {
    let mut h = History::new(Observation::blank(1));
    for &(a, x) in steps {
        h.push(Action::Query(a), Observation::scalar(x)).unwrap();
    }
    h
}

/// Random deterministic models over a three-letter alphabet, ties excluded.
pub fn deterministic_models(k: usize, m: usize, rng: &mut RandomSource) -> Vec<Vec<f64>> {
    let letters = [0.0, 0.5, 1.0];
    let mut out = Vec::new();
    while out.len() < m {
        let mu: Vec<f64> = (0..k).map(|_| letters[rng.below(3)]).collect();
        let top = mu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if mu.iter().filter(|&&x| x == top).count() == 1 {
            out.push(mu);
        }
    }
    out
}
