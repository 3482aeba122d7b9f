//! Classical best-arm identification baselines and posterior-assisted policies.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::core::{Action, History, Hypothesis, Observation, Policy};
use crate::error::{Error, Result};
use crate::posterior::{argmax_prob, entropy, PosteriorModel};
use crate::rng::RandomSource;

/// Per-arm reveal counts and sums. Means are NaN until the first reveal.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub counts: Vec<usize>,
    pub sums: Vec<f64>,
    /// Total number of scalar reveals.
    pub t: usize,
}

impl ArmStats {
    pub fn new(k: usize) -> Self {
        Self { counts: vec![0; k], sums: vec![0.0; k], t: 0 }
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn reveal(&mut self, arm: usize, x: f64) {
        self.counts[arm] += 1;
        self.sums[arm] += x;
        self.t += 1;
    }

    /// Fold one query outcome. Width-K observations reveal every unmasked arm.
    pub fn observe(&mut self, a: usize, x: &Observation) {
        if x.dim() == self.k() && self.k() > 1 {
            for (v, (&val, &m)) in x.values.iter().zip(&x.mask).enumerate() {
                if m {
                    self.reveal(v, val);
                }
            }
        } else if x.mask.first().copied().unwrap_or(false) {
            self.reveal(a, x.values[0]);
        }
    }

    pub fn from_history(h: &History, k: usize) -> Self {
        let mut s = Self::new(k);
        for (a, x) in &h.steps {
            if let Action::Query(a) = *a {
                s.observe(a, x);
            }
        }
        s
    }

    pub fn mean(&self, a: usize) -> f64 {
        if self.counts[a] == 0 {
            f64::NAN
        } else {
            self.sums[a] / self.counts[a] as f64
        }
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.k()).map(|a| self.mean(a)).collect()
    }

    pub fn first_unpulled(&self) -> Option<usize> {
        self.counts.iter().position(|&c| c == 0)
    }

    /// Empirical best arm, lowest index on ties; unpulled arms rank last.
    pub fn best(&self) -> usize {
        let mut b = 0;
        let mut bv = f64::NEG_INFINITY;
        for a in 0..self.k() {
            let m = self.mean(a);
            if m > bv {
                bv = m;
                b = a;
            }
        }
        b
    }
}

/// Break exact ties among the maximal entries by subtracting `1e-12 * rank`.
fn jitter_ties(mu: &[f64]) -> Vec<f64> {
    let max = mu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut rank = 0.0;
    mu.iter()
        .map(|&m| {
            if m == max {
                let v = m - 1e-12 * rank;
                rank += 1.0;
                v
            } else {
                m
            }
        })
        .collect()
}

/// Optimal Gaussian track-and-stop proportions for the empirical means.
pub fn tas_allocation(mu_hat: &[f64], sigma: f64) -> Result<Vec<f64>> {
    let k = mu_hat.len();
    if k < 2 {
        return Err(Error::DomainError("need at least two arms".into()));
    }
    if mu_hat.iter().all(|&m| m == mu_hat[0]) || mu_hat.iter().any(|m| !m.is_finite()) {
        return Err(Error::DegenerateGaps);
    }
    let mu = jitter_ties(mu_hat);
    let best = (1..k).fold(0, |b, a| if mu[a] > mu[b] { a } else { b });
    let c: Vec<f64> = (0..k).map(|a| (mu[best] - mu[a]).powi(2) / (2.0 * sigma * sigma)).collect();
    let cmin = (0..k).filter(|&a| a != best).map(|a| c[a]).fold(f64::INFINITY, f64::min);
    // Each challenger's ratio x_a = w_a / w_best equalizes the pairwise terms at
    // level y; the optimum is the y where the squared ratios sum to one.
    let ratios = |y: f64| -> Vec<f64> { (0..k).map(|a| if a == best { 0.0 } else { y / (c[a] - y) }).collect() };
    let (mut lo, mut hi) = (0.0, cmin);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let s: f64 = ratios(mid).iter().map(|x| x * x).sum();
        if s > 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let x = ratios(0.5 * (lo + hi));
    let total = 1.0 + x.iter().sum::<f64>();
    Ok((0..k).map(|a| if a == best { 1.0 / total } else { x[a] / total }).collect())
}

/// Value of the allocation objective `min_a w_b w_a / (w_b + w_a) * c_a` at `w`.
pub fn tas_objective(mu: &[f64], sigma: f64, w: &[f64]) -> f64 {
    let mu = jitter_ties(mu);
    let best = (1..mu.len()).fold(0, |b, a| if mu[a] > mu[b] { a } else { b });
    (0..mu.len())
        .filter(|&a| a != best)
        .map(|a| {
            let s = w[best] + w[a];
            let h = if s > 0.0 { w[best] * w[a] / s } else { 0.0 };
            h * (mu[best] - mu[a]).powi(2) / (2.0 * sigma * sigma)
        })
        .fold(f64::INFINITY, f64::min)
}

/// D-tracking with forced exploration of arms below `sqrt(t) - K/2`.
pub fn d_tracking_select(stats: &ArmStats, target: &[f64]) -> usize {
    let k = stats.k() as f64;
    let t = stats.t as f64;
    let floor = t.sqrt() - k / 2.0;
    if let Some(a) = (0..stats.k()).find(|&a| stats.counts[a] as f64 <= floor) {
        return a;
    }
    let mut best = 0;
    let mut bv = f64::INFINITY;
    for a in 0..stats.k() {
        let v = stats.counts[a] as f64 - t * target[a];
        if v < bv {
            bv = v;
            best = a;
        }
    }
    best
}

/// Stopping threshold `ln((1 + ln t) / delta)`.
pub fn glrt_threshold(t: usize, delta: f64) -> f64 {
    ((1.0 + (t.max(1) as f64).ln()) / delta).ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlrtDecision {
    pub stop: bool,
    pub statistic: f64,
    pub threshold: f64,
}

/// Gaussian generalized likelihood ratio stopping test.
pub fn glrt_stop(stats: &ArmStats, sigma: f64, delta: f64) -> Result<GlrtDecision> {
    if let Some(a) = stats.first_unpulled() {
        return Err(Error::UnpulledArm(a));
    }
    let mu = stats.means();
    let b = stats.best();
    let nb = stats.counts[b] as f64;
    let statistic = (0..stats.k())
        .filter(|&a| a != b)
        .map(|a| {
            let na = stats.counts[a] as f64;
            nb * na / (nb + na) * (mu[b] - mu[a]).powi(2) / (2.0 * sigma * sigma)
        })
        .fold(f64::INFINITY, f64::min);
    let threshold = glrt_threshold(stats.t, delta);
    Ok(GlrtDecision { stop: statistic >= threshold, statistic, threshold })
}

/// Full track-and-stop: allocation, D-tracking and the GLRT stopping rule.
#[derive(Clone, Debug)]
pub struct TasPolicy {
    pub k: usize,
    pub sigma: f64,
    pub delta: f64,
    stats: ArmStats,
    seen: usize,
}

impl TasPolicy {
    pub fn new(k: usize, sigma: f64, delta: f64) -> Self {
        Self { k, sigma, delta, stats: ArmStats::new(k), seen: 0 }
    }

    pub fn stats(&self) -> &ArmStats {
        &self.stats
    }
}

/// Bring incremental statistics in line with `h`.
fn sync_stats(stats: &mut ArmStats, seen: &mut usize, h: &History) {
    if h.n_queries() < *seen {
        *stats = ArmStats::new(stats.k());
        *seen = 0;
    }
    for (a, x) in &h.steps[*seen..] {
        if let Action::Query(a) = *a {
            stats.observe(a, x);
        }
    }
    *seen = h.n_queries();
}

impl Policy for TasPolicy {
    fn reset(&mut self) {
        self.stats = ArmStats::new(self.k);
        self.seen = 0;
    }

    fn act(&mut self, h: &History, _rng: &mut RandomSource) -> Result<Action> {
        sync_stats(&mut self.stats, &mut self.seen, h);
        if let Some(a) = self.stats.first_unpulled() {
            return Ok(Action::Query(a));
        }
        if glrt_stop(&self.stats, self.sigma, self.delta)?.stop {
            return Ok(Action::Stop);
        }
        let w = tas_allocation(&self.stats.means(), self.sigma).unwrap_or_else(|_| vec![1.0 / self.k as f64; self.k]);
        Ok(Action::Query(d_tracking_select(&self.stats, &w)))
    }

    fn recommend(&mut self, h: &History) -> Hypothesis {
        sync_stats(&mut self.stats, &mut self.seen, h);
        self.stats.best()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApproxTasForm {
    /// Weights proportional to the inverse squared gap.
    #[default]
    Squared,
    /// Weights proportional to the inverse gap.
    Linear,
}

/// Inverse-gap proportions, with the best arm's gap replaced by the smallest other gap.
pub fn approx_tas_policy(stats: &ArmStats, form: ApproxTasForm) -> Result<Vec<f64>> {
    let mu = stats.means();
    if mu.iter().any(|m| !m.is_finite()) {
        return Err(Error::UnpulledArm(stats.first_unpulled().unwrap_or(0)));
    }
    let b = stats.best();
    let mut gaps: Vec<f64> = mu.iter().map(|m| mu[b] - m).collect();
    let gmin = (0..mu.len()).filter(|&a| a != b).map(|a| gaps[a]).fold(f64::INFINITY, f64::min);
    if !(gmin > 0.0) {
        return Err(Error::DegenerateGaps);
    }
    gaps[b] = gmin;
    let raw: Vec<f64> = gaps
        .iter()
        .map(|g| match form {
            ApproxTasForm::Squared => 1.0 / (g * g),
            ApproxTasForm::Linear => 1.0 / g,
        })
        .collect();
    let s: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|r| r / s).collect())
}

/// Approximate track-and-stop: inverse-gap proportions, D-tracking and GLRT stopping.
#[derive(Clone, Debug)]
pub struct ApproxTasPolicy {
    pub k: usize,
    pub sigma: f64,
    pub delta: f64,
    pub form: ApproxTasForm,
    stats: ArmStats,
    seen: usize,
}

impl ApproxTasPolicy {
    pub fn new(k: usize, sigma: f64, delta: f64, form: ApproxTasForm) -> Self {
        Self { k, sigma, delta, form, stats: ArmStats::new(k), seen: 0 }
    }
}

impl Policy for ApproxTasPolicy {
    fn reset(&mut self) {
        self.stats = ArmStats::new(self.k);
        self.seen = 0;
    }

    fn act(&mut self, h: &History, _rng: &mut RandomSource) -> Result<Action> {
        sync_stats(&mut self.stats, &mut self.seen, h);
        if let Some(a) = self.stats.first_unpulled() {
            return Ok(Action::Query(a));
        }
        if glrt_stop(&self.stats, self.sigma, self.delta)?.stop {
            return Ok(Action::Stop);
        }
        let w = approx_tas_policy(&self.stats, self.form).unwrap_or_else(|_| vec![1.0 / self.k as f64; self.k]);
        Ok(Action::Query(d_tracking_select(&self.stats, &w)))
    }

    fn recommend(&mut self, h: &History) -> Hypothesis {
        sync_stats(&mut self.stats, &mut self.seen, h);
        self.stats.best()
    }
}

/// Gaussian plug-in probability that each arm is the best, by quadrature.
pub fn plugin_best_probs(stats: &ArmStats, sigma: f64) -> Vec<f64> {
    let k = stats.k();
    let mu = stats.means();
    let sd: Vec<f64> = (0..k).map(|a| sigma / (stats.counts[a].max(1) as f64).sqrt()).collect();
    let lo = (0..k).map(|a| mu[a] - 8.0 * sd[a]).fold(f64::INFINITY, f64::min);
    let hi = (0..k).map(|a| mu[a] + 8.0 * sd[a]).fold(f64::NEG_INFINITY, f64::max);
    let laws: Vec<Normal> = (0..k).map(|a| Normal::new(mu[a], sd[a]).expect("positive sd")).collect();
    let n = 2000;
    let dx = (hi - lo) / n as f64;
    let mut p = vec![0.0; k];
    for i in 0..=n {
        let x = lo + dx * i as f64;
        let wt = if i == 0 || i == n { 0.5 } else { 1.0 };
        let cdfs: Vec<f64> = laws.iter().map(|l| l.cdf(x)).collect();
        for a in 0..k {
            let others: f64 = (0..k).filter(|&b| b != a).map(|b| cdfs[b]).product();
            p[a] += wt * dx * laws[a].pdf(x) * others;
        }
    }
    let s: f64 = p.iter().sum();
    p.iter().map(|v| v / s).collect()
}

/// Top-two sampling: the plug-in leader with probability 1/2, else the challenger.
pub fn ttps_select(stats: &ArmStats, sigma: f64, rng: &mut RandomSource) -> usize {
    if let Some(a) = stats.first_unpulled() {
        return a;
    }
    let p = plugin_best_probs(stats, sigma);
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).unwrap().then(a.cmp(&b)));
    if rng.bernoulli(0.5) {
        order[0]
    } else {
        order[1]
    }
}

pub fn uniform_select(k: usize, rng: &mut RandomSource) -> usize {
    rng.below(k)
}

/// Top-two sampling with the GLRT stopping rule.
#[derive(Clone, Debug)]
pub struct TtpsPolicy {
    pub k: usize,
    pub sigma: f64,
    pub delta: f64,
    stats: ArmStats,
    seen: usize,
}

impl TtpsPolicy {
    pub fn new(k: usize, sigma: f64, delta: f64) -> Self {
        Self { k, sigma, delta, stats: ArmStats::new(k), seen: 0 }
    }
}

impl Policy for TtpsPolicy {
    fn reset(&mut self) {
        self.stats = ArmStats::new(self.k);
        self.seen = 0;
    }

    fn act(&mut self, h: &History, rng: &mut RandomSource) -> Result<Action> {
        sync_stats(&mut self.stats, &mut self.seen, h);
        if self.stats.first_unpulled().is_none() && glrt_stop(&self.stats, self.sigma, self.delta)?.stop {
            return Ok(Action::Stop);
        }
        Ok(Action::Query(ttps_select(&self.stats, self.sigma, rng)))
    }

    fn recommend(&mut self, h: &History) -> Hypothesis {
        sync_stats(&mut self.stats, &mut self.seen, h);
        self.stats.best()
    }
}

/// Weighted candidate outcomes of a query, used to average entropy reductions.
pub trait Predictive {
    fn outcomes(&self, h: &History, a: usize) -> Vec<(Observation, f64)>;
}

impl<T: Predictive + ?Sized> Predictive for &T {
    fn outcomes(&self, h: &History, a: usize) -> Vec<(Observation, f64)> {
        (**self).outcomes(h, a)
    }
}

/// Gaussian plug-in around the arm's empirical mean: equally weighted quantile
/// points clamped to four standard deviations.
#[derive(Clone, Debug)]
pub struct GaussianPlugIn {
    pub k: usize,
    pub sigma: f64,
    pub grid: usize,
}

impl Predictive for GaussianPlugIn {
    fn outcomes(&self, h: &History, a: usize) -> Vec<(Observation, f64)> {
        let stats = ArmStats::from_history(h, self.k);
        let center = if stats.counts[a] > 0 {
            stats.mean(a)
        } else if stats.t > 0 {
            stats.sums.iter().sum::<f64>() / stats.t as f64
        } else {
            0.0
        };
        let z = Normal::new(0.0, 1.0).expect("standard normal");
        let w = 1.0 / self.grid as f64;
        (0..self.grid)
            .map(|j| {
                let q = z.inverse_cdf((j as f64 + 0.5) * w).clamp(-4.0, 4.0);
                (Observation::scalar(center + self.sigma * q), w)
            })
            .collect()
    }
}

/// Fixed list of scalar outcomes with history-dependent weights.
pub struct DiscretePredictive<F> {
    pub points: Vec<f64>,
    pub weights: F,
}

impl<F: Fn(&History, usize) -> Vec<f64>> Predictive for DiscretePredictive<F> {
    fn outcomes(&self, h: &History, a: usize) -> Vec<(Observation, f64)> {
        self.points.iter().map(|&x| Observation::scalar(x)).zip((self.weights)(h, a)).collect()
    }
}

/// Expected entropy reduction of each query under `predictive`.
pub fn iids_gains<M: PosteriorModel + ?Sized, P: Predictive + ?Sized>(infer: &M, predictive: &P, h: &History, k: usize) -> Vec<f64> {
    let h0 = entropy(&infer.hyp_probs(h));
    (0..k)
        .map(|a| {
            if h0 == 0.0 {
                return 0.0;
            }
            let after: f64 = predictive
                .outcomes(h, a)
                .into_iter()
                .filter(|(_, w)| *w > 0.0)
                .map(|(x, w)| {
                    let next = h.append(Action::Query(a), x).expect("open history");
                    w * entropy(&infer.hyp_probs(&next))
                })
                .sum();
            h0 - after
        })
        .collect()
}

/// Information-gain maximizing query, lowest index on ties.
pub fn iids_select<M: PosteriorModel + ?Sized, P: Predictive + ?Sized>(infer: &M, predictive: &P, h: &History, k: usize) -> usize {
    let g = iids_gains(infer, predictive, h, k);
    argmax_prob(&g).0
}

/// Information-directed sampling driven by an inference net; optionally stops
/// once the posterior mass reaches `1 - delta`.
pub struct IidsPolicy<M, P> {
    pub infer: M,
    pub predictive: P,
    pub k: usize,
    pub delta: Option<f64>,
}

impl<M: PosteriorModel, P: Predictive> Policy for IidsPolicy<M, P> {
    fn act(&mut self, h: &History, _rng: &mut RandomSource) -> Result<Action> {
        if let Some(d) = self.delta {
            if argmax_prob(&self.infer.hyp_probs(h)).1 >= 1.0 - d {
                return Ok(Action::Stop);
            }
        }
        Ok(Action::Query(iids_select(&self.infer, &self.predictive, h, self.k)))
    }

    fn recommend(&mut self, h: &History) -> Hypothesis {
        argmax_prob(&self.infer.hyp_probs(h)).0
    }
}

/// Greedy posterior rule: stop once confident, else pull the most likely best arm.
pub fn idpt_act<M: PosteriorModel + ?Sized>(infer: &M, h: &History, delta: f64, k: usize) -> Result<Action> {
    let p = infer.hyp_probs(h);
    if p.len() != k {
        return Err(Error::HypothesisActionMismatch { hyps: p.len(), actions: k });
    }
    let (a, m) = argmax_prob(&p);
    Ok(if m >= 1.0 - delta { Action::Stop } else { Action::Query(a) })
}

pub struct IdptPolicy<M> {
    pub infer: M,
    pub k: usize,
    pub delta: f64,
}

impl<M: PosteriorModel> Policy for IdptPolicy<M> {
    fn act(&mut self, h: &History, _rng: &mut RandomSource) -> Result<Action> {
        idpt_act(&self.infer, h, self.delta, self.k)
    }

    fn recommend(&mut self, h: &History) -> Hypothesis {
        argmax_prob(&self.infer.hyp_probs(h)).0
    }
}

/// Anything that scores the actions of a history (queries, then stop if present).
pub trait ActionValue {
    fn q_values(&self, h: &History) -> Vec<f64>;
}

impl<T: ActionValue + ?Sized> ActionValue for &T {
    fn q_values(&self, h: &History) -> Vec<f64> {
        (**self).q_values(h)
    }
}

/// One step of explore-then-commit: follow greedy Q until it stops, then commit.
pub fn etc_act<Q: ActionValue + ?Sized, M: PosteriorModel + ?Sized>(
    q: &Q,
    infer: &M,
    h: &History,
    committed: &mut Option<usize>,
    k: usize,
) -> Action {
    if let Some(c) = *committed {
        return Action::Query(c);
    }
    let qs = q.q_values(h);
    let a = argmax_prob(&qs).0;
    if a == k {
        let c = argmax_prob(&infer.hyp_probs(h)).0;
        *committed = Some(c);
        Action::Query(c)
    } else {
        Action::Query(a)
    }
}

pub struct EtcPolicy<Q, M> {
    pub q: Q,
    pub infer: M,
    pub k: usize,
    pub committed: Option<usize>,
    /// Query index at which the commitment happened.
    pub commit_time: Option<usize>,
}

impl<Q, M> EtcPolicy<Q, M> {
    pub fn new(q: Q, infer: M, k: usize) -> Self {
        Self { q, infer, k, committed: None, commit_time: None }
    }
}

impl<Q: ActionValue, M: PosteriorModel> Policy for EtcPolicy<Q, M> {
    fn reset(&mut self) {
        self.committed = None;
        self.commit_time = None;
    }

    fn act(&mut self, h: &History, _rng: &mut RandomSource) -> Result<Action> {
        let was = self.committed.is_some();
        let a = etc_act(&self.q, &self.infer, h, &mut self.committed, self.k);
        if !was && self.committed.is_some() {
            self.commit_time = Some(h.n_queries());
        }
        Ok(a)
    }

    fn recommend(&mut self, h: &History) -> Hypothesis {
        self.committed.unwrap_or_else(|| argmax_prob(&self.infer.hyp_probs(h)).0)
    }
}

/// UCB1 index with known noise scale; unpulled arms first.
pub fn ucb_select(stats: &ArmStats, sigma: f64) -> usize {
    if let Some(a) = stats.first_unpulled() {
        return a;
    }
    let lt = (stats.t.max(1) as f64).ln();
    let idx: Vec<f64> =
        (0..stats.k()).map(|a| stats.mean(a) + sigma * (2.0 * lt / stats.counts[a] as f64).sqrt()).collect();
    argmax_prob(&idx).0
}

#[derive(Clone, Debug)]
pub struct UcbPolicy {
    pub k: usize,
    pub sigma: f64,
}

impl Policy for UcbPolicy {
    fn act(&mut self, h: &History, _rng: &mut RandomSource) -> Result<Action> {
        Ok(Action::Query(ucb_select(&ArmStats::from_history(h, self.k), self.sigma)))
    }

    fn recommend(&mut self, h: &History) -> Hypothesis {
        ArmStats::from_history(h, self.k).best()
    }
}

/// Cumulative pseudo-regret of the queried arms.
pub fn cumulative_regret(h: &History, means: &[f64]) -> f64 {
    let best = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    h.actions().map(|a| best - means[a]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_arm_symmetry() {
        let w = tas_allocation(&[1.0, 0.0], 0.5).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-9 && (w[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn threshold_at_one() {
        assert!((glrt_threshold(1, 0.1) - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn approx_linear_example() {
        let mut s = ArmStats::new(3);
        s.reveal(0, 1.0);
        s.reveal(1, 0.8);
        s.reveal(2, 0.6);
        let w = approx_tas_policy(&s, ApproxTasForm::Linear).unwrap();
        for (a, b) in w.iter().zip([0.4, 0.4, 0.2]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forced_exploration() {
        let mut s = ArmStats::new(4);
        s.counts = vec![1, 5, 5, 5];
        s.t = 16;
        assert_eq!(d_tracking_select(&s, &[0.25; 4]), 0);
    }
}
