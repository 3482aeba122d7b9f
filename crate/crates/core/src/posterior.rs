//! Exact posteriors over hypotheses for finite-support priors.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::core::{Action, History, Hypothesis};
use crate::envs::{top_two_gap, EnvModel, Family, PriorSpec, ScalarLaw, Support};
use crate::error::{Error, Result};
use crate::rng::RandomSource;

/// Default number of cells of the observation quantization.
pub const DEFAULT_CELLS: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorState {
    pub model_weights: Vec<f64>,
    pub log_weights: Vec<f64>,
    pub hyp_probs: Vec<f64>,
}

/// Normalize log weights into probabilities.
pub fn normalize_log(log_w: &[f64]) -> Result<Vec<f64>> {
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::ZeroLikelihoodEverywhere);
    }
    let w: Vec<f64> = log_w.iter().map(|&l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / s).collect())
}

/// Marginalize model weights onto hypotheses.
pub fn marginalize(spec: &PriorSpec, weights: &[f64]) -> Vec<f64> {
    let mut p = vec![0.0; spec.n_hypotheses()];
    for (m, w) in spec.models().expect("finite prior").iter().zip(weights) {
        p[m.model.h_star] += w;
    }
    p
}

/// Log-likelihood of the queries in `h` under one model.
pub fn log_likelihood(model: &EnvModel, h: &History) -> f64 {
    let mut ll = 0.0;
    let mut prefix = History::new(h.initial.clone());
    for (a, x) in &h.steps {
        if let Action::Query(a) = *a {
            ll += model.log_likelihood(&prefix, a, x);
            if ll == f64::NEG_INFINITY {
                return ll;
            }
            prefix.steps.push((Action::Query(a), x.clone()));
        }
    }
    ll
}

/// Posterior over models and hypotheses after `h`. The first observation is
/// treated as uninformative.
pub fn posterior_update(spec: &PriorSpec, h: &History) -> Result<PosteriorState> {
    let models = spec.models().ok_or_else(|| Error::InvalidConfig("posterior needs a finite prior".into()))?;
    let log_weights: Vec<f64> = models.iter().map(|m| m.weight.ln() + log_likelihood(&m.model, h)).collect();
    let model_weights = normalize_log(&log_weights)?;
    let hyp_probs = marginalize(spec, &model_weights);
    Ok(PosteriorState { model_weights, log_weights, hyp_probs })
}

/// Argmax of the hypothesis posterior (lowest index on ties) and its mass.
pub fn map_hypothesis(p: &PosteriorState) -> (Hypothesis, f64) {
    argmax_prob(&p.hyp_probs)
}

pub fn argmax_prob(p: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for i in 1..p.len() {
        if p[i] > p[best] {
            best = i;
        }
    }
    (best, p[best])
}

/// Finite quantization of scalar observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ObsGrid {
    /// `n` equal-width cells on `[lo, hi]`; the outer cells extend to infinity.
    Cells { lo: f64, hi: f64, n: usize },
    /// Finite observation alphabet.
    Points(Vec<f64>),
}

impl ObsGrid {
    pub fn cells(lo: f64, hi: f64, n: usize) -> Self {
        ObsGrid::Cells { lo, hi, n }
    }

    pub fn len(&self) -> usize {
        match self {
            ObsGrid::Cells { n, .. } => *n,
            ObsGrid::Points(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell boundaries `(a, b]` of cell `c`.
    pub fn bounds(&self, c: usize) -> (f64, f64) {
        match *self {
            ObsGrid::Cells { lo, hi, n } => {
                let w = (hi - lo) / n as f64;
                let a = if c == 0 { f64::NEG_INFINITY } else { lo + w * c as f64 };
                let b = if c + 1 == n { f64::INFINITY } else { lo + w * (c + 1) as f64 };
                (a, b)
            }
            ObsGrid::Points(ref p) => (p[c], p[c]),
        }
    }

    /// Cell containing `x`.
    pub fn locate(&self, x: f64) -> Option<usize> {
        match *self {
            ObsGrid::Cells { lo, hi, n } => {
                let w = (hi - lo) / n as f64;
                let c = ((x - lo) / w).ceil() as i64 - 1;
                Some(c.clamp(0, n as i64 - 1) as usize)
            }
            ObsGrid::Points(ref p) => p.iter().position(|&v| v == x),
        }
    }

    /// Representative value of cell `c` (midpoint, or the point itself).
    pub fn representative(&self, c: usize) -> f64 {
        match *self {
            ObsGrid::Cells { lo, hi, n } => lo + (hi - lo) / n as f64 * (c as f64 + 0.5),
            ObsGrid::Points(ref p) => p[c],
        }
    }

    /// Probability that an observation drawn from `law` lands in cell `c`.
    pub fn cell_prob(&self, law: ScalarLaw, c: usize) -> f64 {
        match (self, law) {
            (ObsGrid::Points(p), ScalarLaw::Point(v)) => (p[c] == v) as u8 as f64,
            (ObsGrid::Points(_), ScalarLaw::Gaussian { .. }) => {
                panic!("a point alphabet cannot quantize a continuous law")
            }
            (ObsGrid::Cells { .. }, ScalarLaw::Point(v)) => (self.locate(v) == Some(c)) as u8 as f64,
            (ObsGrid::Cells { .. }, ScalarLaw::Gaussian { mean, sd }) => {
                let (a, b) = self.bounds(c);
                let n = Normal::new(mean, sd).expect("sd > 0");
                let fa = if a.is_finite() { n.cdf(a) } else { 0.0 };
                let fb = if b.is_finite() { n.cdf(b) } else { 1.0 };
                // Upper tail computed directly keeps precision for far cells.
                if a.is_finite() && a > mean {
                    let sa = n.sf(a);
                    let sb = if b.is_finite() { n.sf(b) } else { 0.0 };
                    return (sa - sb).max(0.0);
                }
                (fb - fa).max(0.0)
            }
        }
    }

    /// Cell probabilities of `law` over the whole grid.
    pub fn cell_probs(&self, law: ScalarLaw) -> Vec<f64> {
        (0..self.len()).map(|c| self.cell_prob(law, c)).collect()
    }
}

/// Predictive probability of each grid cell for query `a` after `h`.
pub fn posterior_predictive(spec: &PriorSpec, h: &History, a: Action, grid: &ObsGrid) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let a = match a {
        Action::Query(a) => a,
        Action::Stop => return Err(Error::InvalidAction { index: spec.k(), k: spec.k() }),
    };
    let post = posterior_update(spec, h)?;
    let models = spec.models().expect("finite");
    let mut out = vec![0.0; grid.len()];
    for (m, w) in models.iter().zip(&post.model_weights) {
        if *w == 0.0 {
            continue;
        }
        let law = m.model.scalar_law(a).ok_or_else(|| Error::InvalidConfig("predictive needs scalar observations".into()))?;
        for (c, o) in out.iter_mut().enumerate() {
            *o += w * grid.cell_prob(law, c);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DiscretizeMode {
    Lattice,
    Iid,
}

/// Finite-support approximation of a continuous prior. `grid_per_dim^d` candidate
/// models are drawn (i.i.d. by default) and the invariant-violating ones dropped.
pub fn discretize_prior(spec: &PriorSpec, grid_per_dim: usize, rng: &mut RandomSource) -> Result<PriorSpec> {
    discretize_prior_with(spec, grid_per_dim, DiscretizeMode::Iid, rng)
}

pub fn discretize_prior_with(
    spec: &PriorSpec,
    grid_per_dim: usize,
    mode: DiscretizeMode,
    rng: &mut RandomSource,
) -> Result<PriorSpec> {
    if !matches!(spec.support, Support::Continuous) {
        return Ok(spec.clone());
    }
    let (dims, lo, hi) = match spec.family {
        Family::GaussianMinGap { k, upper, .. } => (k, 0.0, upper),
        Family::MagicAction { k, lo, hi, .. } => (k - 1, lo, hi),
        _ => return Err(Error::InvalidConfig("family does not support gridding".into())),
    };
    let g = grid_per_dim.max(1);
    let count = g.checked_pow(dims as u32).filter(|&c| c <= 10_000_000).ok_or(Error::StateSpaceTooLarge { limit: 10_000_000 })?;
    let mut models = Vec::new();
    for idx in 0..count {
        let point: Vec<f64> = match mode {
            DiscretizeMode::Lattice => {
                let mut r = idx;
                (0..dims)
                    .map(|_| {
                        let i = r % g;
                        r /= g;
                        if g == 1 {
                            0.5 * (lo + hi)
                        } else {
                            lo + (hi - lo) * i as f64 / (g - 1) as f64
                        }
                    })
                    .collect()
            }
            DiscretizeMode::Iid => (0..dims).map(|_| rng.uniform_in(lo, hi)).collect(),
        };
        let model = match spec.family {
            Family::GaussianMinGap { sigma, delta0, .. } => {
                if top_two_gap(&point) < delta0 || top_two_gap(&point) == 0.0 {
                    continue;
                }
                EnvModel::gaussian(point, sigma)?
            }
            Family::MagicAction { sigma_m, sigma, phi, .. } => {
                if top_two_gap(&point) == 0.0 {
                    continue;
                }
                let mut means = vec![0.0];
                means.extend(point);
                EnvModel::magic_action(means, sigma_m, sigma, phi)?
            }
            _ => unreachable!(),
        };
        models.push(model);
    }
    if models.len() < 2 {
        return Err(Error::GridTooCoarse { survivors: models.len() });
    }
    PriorSpec::uniform(spec.family.clone(), models)
}

/// Anything that maps a history to a distribution over hypotheses.
pub trait PosteriorModel {
    fn hyp_probs(&self, h: &History) -> Vec<f64>;
}

impl<T: PosteriorModel + ?Sized> PosteriorModel for &T {
    fn hyp_probs(&self, h: &History) -> Vec<f64> {
        (**self).hyp_probs(h)
    }
}

impl<T: PosteriorModel + ?Sized> PosteriorModel for Box<T> {
    fn hyp_probs(&self, h: &History) -> Vec<f64> {
        (**self).hyp_probs(h)
    }
}

/// Exact posterior of a finite prior as a `PosteriorModel`.
#[derive(Clone, Debug)]
pub struct ExactPosterior {
    pub spec: PriorSpec,
}

impl PosteriorModel for ExactPosterior {
    fn hyp_probs(&self, h: &History) -> Vec<f64> {
        posterior_update(&self.spec, h).map(|p| p.hyp_probs).unwrap_or_else(|_| {
            let n = self.spec.n_hypotheses();
            vec![1.0 / n as f64; n]
        })
    }
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::Observation;

    #[test]
    fn deterministic_separation() {
        let spec = PriorSpec::two_model_det();
        let h = History::new(Observation::blank(1)).append(Action::Query(0), Observation::scalar(1.0)).unwrap();
        let p = posterior_update(&spec, &h).unwrap();
        assert_eq!(p.hyp_probs, vec![1.0, 0.0]);
    }

    #[test]
    fn zero_likelihood() {
        let spec = PriorSpec::two_model_det();
        let h = History::new(Observation::blank(1)).append(Action::Query(0), Observation::scalar(0.5)).unwrap();
        assert!(matches!(posterior_update(&spec, &h), Err(Error::ZeroLikelihoodEverywhere)));
    }

    #[test]
    fn map_tie_break() {
        let p = PosteriorState { model_weights: vec![], log_weights: vec![], hyp_probs: vec![0.25; 4] };
        assert_eq!(map_hypothesis(&p), (0, 0.25));
    }

    #[test]
    fn cell_locate_matches_bounds() {
        let g = ObsGrid::cells(-1.0, 1.0, 8);
        for c in 0..8 {
            let (a, b) = g.bounds(c);
            let x = if a.is_finite() { a + 1e-9 } else { b - 0.1 };
            assert_eq!(g.locate(x), Some(c));
        }
    }
}
