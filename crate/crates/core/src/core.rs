//! Histories, episode modes and the rollout engine shared by all policies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomSource;

/// Index of a hypothesis in the finite set of an environment family.
pub type Hypothesis = usize;

/// An environment query or the distinguished stop action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Query(usize),
    Stop,
}

impl Action {
    /// Flat index with `Stop` mapped to `k`.
    pub fn index(self, k: usize) -> usize {
        match self {
            Action::Query(a) => a,
            Action::Stop => k,
        }
    }

    pub fn from_index(i: usize, k: usize) -> Self {
        if i == k {
            Action::Stop
        } else {
            Action::Query(i)
        }
    }

    pub fn is_stop(self) -> bool {
        matches!(self, Action::Stop)
    }
}

/// Fixed-width real vector with a reveal mask. Hidden entries hold 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl Observation {
    pub fn scalar(x: f64) -> Self {
        Self { values: vec![x], mask: vec![true] }
    }

    /// All-hidden observation of width `d`.
    pub fn blank(d: usize) -> Self {
        Self { values: vec![0.0; d], mask: vec![false; d] }
    }

    pub fn full(values: Vec<f64>) -> Self {
        let mask = vec![true; values.len()];
        Self { values, mask }
    }

    /// Build from values and mask, zeroing hidden coordinates.
    pub fn masked(mut values: Vec<f64>, mask: Vec<bool>) -> Self {
        for (v, &m) in values.iter_mut().zip(&mask) {
            if !m {
                *v = 0.0;
            }
        }
        Self { values, mask }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Scalar value of a one-dimensional observation.
    pub fn value(&self) -> f64 {
        self.values[0]
    }
}

/// Alternating observation/action trajectory `x_1, a_1, x_2, ..., x_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub initial: Observation,
    pub steps: Vec<(Action, Observation)>,
    /// Set once the stop action has been taken. A stop adds no observation.
    pub stopped: bool,
}

impl History {
    pub fn new(initial: Observation) -> Self {
        Self { initial, steps: Vec::new(), stopped: false }
    }

    /// Number of observations, `1 + queries`.
    pub fn t(&self) -> usize {
        1 + self.steps.len()
    }

    pub fn n_queries(&self) -> usize {
        self.steps.len()
    }

    /// Value-semantics append.
    pub fn append(&self, a: Action, x: Observation) -> Result<History> {
        let mut h = self.clone();
        h.push(a, x)?;
        Ok(h)
    }

    /// In-place append used by the rollout loop.
    pub fn push(&mut self, a: Action, x: Observation) -> Result<()> {
        if self.stopped {
            return Err(Error::AppendAfterStop);
        }
        match a {
            Action::Stop => self.stopped = true,
            Action::Query(_) => self.steps.push((a, x)),
        }
        Ok(())
    }

    pub fn with_stop(&self) -> Result<History> {
        self.append(Action::Stop, Observation::blank(0))
    }

    /// Prefix holding the first `t` observations.
    pub fn prefix(&self, t: usize) -> History {
        History { initial: self.initial.clone(), steps: self.steps[..t - 1].to_vec(), stopped: false }
    }

    /// Queried arms in order.
    pub fn actions(&self) -> impl Iterator<Item = usize> + '_ {
        self.steps.iter().map(|(a, _)| a.index(usize::MAX))
    }

    /// Observation at 1-based position `s`.
    pub fn obs(&self, s: usize) -> &Observation {
        if s == 1 {
            &self.initial
        } else {
            &self.steps[s - 2].1
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum EpisodeMode {
    FixedBudget { n: usize },
    FixedConfidence { delta: f64, n_max: usize },
}

impl EpisodeMode {
    /// Maximum number of queries.
    pub fn horizon(&self) -> usize {
        match *self {
            EpisodeMode::FixedBudget { n } => n,
            EpisodeMode::FixedConfidence { n_max, .. } => n_max,
        }
    }

    pub fn allows_stop(&self) -> bool {
        matches!(self, EpisodeMode::FixedConfidence { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            EpisodeMode::FixedBudget { n } if n == 0 => Err(Error::InvalidConfig("budget must be >= 1".into())),
            EpisodeMode::FixedConfidence { delta, n_max } if !(delta > 0.0 && delta <= 0.5) || n_max == 0 => {
                Err(Error::InvalidConfig(format!("bad fixed-confidence mode delta={delta} n_max={n_max}")))
            }
            _ => Ok(()),
        }
    }
}

/// What the rollout loop needs from an environment.
pub trait Environment {
    /// Number of query actions.
    fn k(&self) -> usize;
    fn n_hypotheses(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn initial_observation(&self, rng: &mut RandomSource) -> Observation;
    fn step(&self, h: &History, a: usize, rng: &mut RandomSource) -> Observation;
    fn h_star(&self) -> Hypothesis;
    /// Episode ended by the environment itself (door exits).
    fn is_terminal(&self, _h: &History) -> bool {
        false
    }
}

/// A sequential decision rule plus its recommendation rule.
pub trait Policy {
    fn reset(&mut self) {}
    fn act(&mut self, h: &History, rng: &mut RandomSource) -> Result<Action>;
    /// Predicted hypothesis for a finished history.
    fn recommend(&mut self, h: &History) -> Hypothesis;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    StopAction,
    Horizon,
    EnvTerminal,
}

#[derive(Clone, Debug)]
pub struct Rollout {
    pub history: History,
    pub h_star: Hypothesis,
    pub stopped_by: StopReason,
}

/// Run one episode of `policy` on `env` under `mode`.
pub fn rollout<E: Environment + ?Sized, P: Policy + ?Sized>(
    env: &E,
    policy: &mut P,
    mode: EpisodeMode,
    rng: &mut RandomSource,
) -> Result<Rollout> {
    mode.validate()?;
    policy.reset();
    let horizon = mode.horizon();
    let mut h = History::new(env.initial_observation(rng));
    let stopped_by = loop {
        if env.is_terminal(&h) {
            break StopReason::EnvTerminal;
        }
        if h.n_queries() >= horizon {
            break StopReason::Horizon;
        }
        match policy.act(&h, rng)? {
            Action::Stop => {
                if !mode.allows_stop() {
                    return Err(Error::PolicyEmittedStopInFixedBudget);
                }
                h.push(Action::Stop, Observation::blank(0))?;
                break StopReason::StopAction;
            }
            Action::Query(a) => {
                if a >= env.k() {
                    return Err(Error::InvalidAction { index: a, k: env.k() });
                }
                let x = env.step(&h, a, rng);
                h.push(Action::Query(a), x)?;
            }
        }
    };
    if h.n_queries() > horizon {
        return Err(Error::HorizonCapExceeded { len: h.n_queries(), cap: horizon });
    }
    Ok(Rollout { history: h, h_star: env.h_star(), stopped_by })
}

/// Uniformly random queries; recommends the arm with the best observed scalar value.
#[derive(Clone, Debug)]
pub struct UniformPolicy {
    pub k: usize,
}

impl Policy for UniformPolicy {
    fn act(&mut self, _h: &History, rng: &mut RandomSource) -> Result<Action> {
        Ok(Action::Query(rng.below(self.k)))
    }

    fn recommend(&mut self, h: &History) -> Hypothesis {
        empirical_best(h, self.k)
    }
}

/// Arm with the highest empirical mean of scalar rewards; unpulled arms rank last,
/// ties go to the lowest index.
pub fn empirical_best(h: &History, k: usize) -> Hypothesis {
    let mut sum = vec![0.0; k];
    let mut cnt = vec![0usize; k];
    for (a, x) in &h.steps {
        if let Action::Query(a) = *a {
            if a < k && x.mask.first().copied().unwrap_or(false) {
                sum[a] += x.values[0];
                cnt[a] += 1;
            }
        }
    }
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for a in 0..k {
        if cnt[a] > 0 {
            let m = sum[a] / cnt[a] as f64;
            if m > best_v {
                best_v = m;
                best = a;
            }
        }
    }
    best
}

/// Policy driven by a closure, convenient for scripted tests.
pub struct FnPolicy<F, R> {
    pub act_fn: F,
    pub rec_fn: R,
}

impl<F, R> Policy for FnPolicy<F, R>
where
    F: FnMut(&History, &mut RandomSource) -> Action,
    R: FnMut(&History) -> Hypothesis,
{
    fn act(&mut self, h: &History, rng: &mut RandomSource) -> Result<Action> {
        Ok((self.act_fn)(h, rng))
    }
    fn recommend(&mut self, h: &History) -> Hypothesis {
        (self.rec_fn)(h)
    }
}
