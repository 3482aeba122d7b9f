//! Meta-trained in-context explorer: token encoding, inference and Q networks,
//! replay, lockstep rollouts, the training loop and fitted-Q variants.

mod fitted;
mod loss;
mod train;

pub use fitted::{fitted_q_linear, BufferDist, ConstantFeatures, FeatureMap, FittedQ, OneHotFeatures, TabularQ};
pub use loss::{inference_loss, q_loss_fixed_budget, q_loss_fixed_confidence, LossSeq, TargetOpts};
pub use train::{
    cost_update, epsilon_at, load_checkpoint, save_checkpoint, train, write_metrics_csv, BatchMode, CertifyConfig,
    EpochMetrics, LearnerState, TrainConfig, Trainer, COST_FLOOR,
};

use std::collections::VecDeque;
use std::sync::Arc;

use crate::baselines::ActionValue;
use crate::core::{Action, EpisodeMode, Environment, History, Hypothesis, Observation, Policy, StopReason};
use crate::envs::EnvModel;
use crate::error::{Error, Result};
use crate::nn::{log_softmax, KvState, ModelConfig, SeqBatch, SequenceModel};
use crate::posterior::{argmax_prob, PosteriorModel};
use crate::rng::RandomSource;
use crate::scalar::Scalar;

/// Maps histories to token rows: observation values, reveal mask and a
/// one-hot of the action that produced the observation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Encoder {
    pub k: usize,
    pub d_obs: usize,
}

impl Encoder {
    pub fn d_in(&self) -> usize {
        2 * self.d_obs + self.k
    }

    pub fn token<S: Scalar>(&self, prev: Option<usize>, x: &Observation, out: &mut Vec<S>) {
        for j in 0..self.d_obs {
            out.push(S::of(x.values.get(j).copied().unwrap_or(0.0)));
        }
        for j in 0..self.d_obs {
            out.push(if x.mask.get(j).copied().unwrap_or(false) { S::one() } else { S::zero() });
        }
        for a in 0..self.k {
            out.push(if prev == Some(a) { S::one() } else { S::zero() });
        }
    }

    /// Tokens of the first `t` observations of `h`.
    pub fn encode<S: Scalar>(&self, h: &History, t: usize) -> Vec<S> {
        let mut out = Vec::with_capacity(t * self.d_in());
        self.token(None, &h.initial, &mut out);
        for (a, x) in h.steps.iter().take(t - 1) {
            self.token(Some(a.index(self.k)), x, &mut out);
        }
        out
    }

    pub fn batch<S: Scalar>(&self, hs: &[&History]) -> SeqBatch<S> {
        let mut b = SeqBatch::new(self.d_in());
        for h in hs {
            b.push(&self.encode::<S>(h, h.t()));
        }
        b
    }
}

/// Approximate posterior over hypotheses: a sequence model with a log-softmax head.
#[derive(Clone, Debug, PartialEq)]
pub struct InferenceNet<S> {
    pub model: SequenceModel<S>,
    pub enc: Encoder,
}

impl<S: Scalar> InferenceNet<S> {
    pub fn new(enc: Encoder, n_hyp: usize, arch: &ModelConfig, rng: &mut RandomSource) -> Self {
        let cfg = ModelConfig { d_in: enc.d_in(), d_out: n_hyp, ..arch.clone() };
        Self { model: SequenceModel::new(cfg, rng), enc }
    }

    pub fn n_hyp(&self) -> usize {
        self.model.cfg.d_out
    }

    /// Log-probabilities at every row of the batch.
    pub fn log_probs_batch(&self, b: &SeqBatch<S>) -> Vec<S> {
        log_softmax(&self.model.forward(b).0, self.n_hyp())
    }

    pub fn log_probs(&self, h: &History) -> Vec<f64> {
        let b = self.enc.batch::<S>(&[h]);
        let lp = self.log_probs_batch(&b);
        let n = self.n_hyp();
        lp[lp.len() - n..].iter().map(|v| v.f64()).collect()
    }
}

impl<S: Scalar> PosteriorModel for InferenceNet<S> {
    fn hyp_probs(&self, h: &History) -> Vec<f64> {
        self.log_probs(h).into_iter().map(f64::exp).collect()
    }
}

/// Action-value network; the extra last output is the stop action when present.
#[derive(Clone, Debug, PartialEq)]
pub struct QNet<S> {
    pub model: SequenceModel<S>,
    pub enc: Encoder,
    pub has_stop: bool,
}

impl<S: Scalar> QNet<S> {
    pub fn new(enc: Encoder, has_stop: bool, arch: &ModelConfig, rng: &mut RandomSource) -> Self {
        let cfg = ModelConfig { d_in: enc.d_in(), d_out: enc.k + has_stop as usize, ..arch.clone() };
        Self { model: SequenceModel::new(cfg, rng), enc, has_stop }
    }

    pub fn width(&self) -> usize {
        self.model.cfg.d_out
    }

    /// Greedy action from one output row, lowest index on ties.
    pub fn greedy(&self, row: &[S]) -> Action {
        let mut b = 0;
        for i in 1..row.len() {
            if row[i] > row[b] {
                b = i;
            }
        }
        Action::from_index(b, self.enc.k)
    }
}

impl<S: Scalar> ActionValue for QNet<S> {
    fn q_values(&self, h: &History) -> Vec<f64> {
        let b = self.enc.batch::<S>(&[h]);
        let out = self.model.forward(&b).0;
        out[out.len() - self.width()..].iter().map(|v| v.f64()).collect()
    }
}

/// A finished training or evaluation trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub history: History,
    pub h_star: Hypothesis,
    pub end: StopReason,
    pub recommended: Option<Hypothesis>,
}

impl Episode {
    /// Action logged at 1-based position `t`, if any.
    pub fn action_at(&self, t: usize) -> Option<Action> {
        if t <= self.history.n_queries() {
            Some(self.history.steps[t - 1].0)
        } else if t == self.history.t() && self.end == StopReason::StopAction {
            Some(Action::Stop)
        } else {
            None
        }
    }

    pub fn correct(&self) -> bool {
        self.recommended == Some(self.h_star)
    }

    /// Positions that count as transitions under `mode`.
    pub fn transition_positions(&self, mode: &EpisodeMode) -> Vec<usize> {
        let q = self.history.n_queries();
        if mode.allows_stop() {
            (1..=q + 1).collect()
        } else {
            (1..=q).collect()
        }
    }
}

/// Ring buffer of transitions, each a position inside a stored episode.
#[derive(Clone, Debug, Default)]
pub struct ReplayBuffer {
    pub capacity: usize,
    items: VecDeque<(Arc<Episode>, usize)>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, items: VecDeque::new() }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn add(&mut self, ep: Episode, mode: &EpisodeMode) {
        let ep = Arc::new(ep);
        for t in ep.transition_positions(mode) {
            if self.items.len() == self.capacity {
                self.items.pop_front();
            }
            self.items.push_back((ep.clone(), t));
        }
    }

    /// `n` transitions drawn uniformly with replacement.
    pub fn sample(&self, n: usize, rng: &mut RandomSource) -> Vec<(Arc<Episode>, usize)> {
        (0..n).map(|_| self.items[rng.below(self.items.len())].clone()).collect()
    }
}

/// Play `envs` in lockstep with epsilon-greedy control from `q`; exploratory
/// moves are uniform over queries. Each episode uses its own stream.
pub fn rollout_batch<S: Scalar>(
    q: &QNet<S>,
    infer: Option<&InferenceNet<S>>,
    envs: &[EnvModel],
    rngs: &mut [RandomSource],
    mode: EpisodeMode,
    eps: f64,
) -> Result<Vec<Episode>> {
    mode.validate()?;
    let k = q.enc.k;
    let horizon = mode.horizon();
    let n = envs.len();
    let mut hs: Vec<History> = envs.iter().zip(rngs.iter_mut()).map(|(e, r)| History::new(e.initial_observation(r))).collect();
    let mut states: Vec<KvState<S>> = (0..n).map(|_| q.model.start()).collect();
    let mut end: Vec<Option<StopReason>> = vec![None; n];
    for i in 0..n {
        if envs[i].is_terminal(&hs[i]) {
            end[i] = Some(StopReason::EnvTerminal);
        } else if horizon == 0 {
            end[i] = Some(StopReason::Horizon);
        }
    }
    let mut tokens: Vec<S> = Vec::new();
    let mut prev: Vec<Option<usize>> = vec![None; n];
    loop {
        let active: Vec<usize> = (0..n).filter(|&i| end[i].is_none()).collect();
        if active.is_empty() {
            break;
        }
        tokens.clear();
        for &i in &active {
            let x = if hs[i].steps.is_empty() { &hs[i].initial } else { &hs[i].steps.last().unwrap().1 };
            q.enc.token(prev[i], x, &mut tokens);
        }
        let out = {
            let mut refs: Vec<&mut KvState<S>> =
                states.iter_mut().zip(&end).filter(|(_, e)| e.is_none()).map(|(s, _)| s).collect();
            q.model.step_many(&mut refs, &tokens)
        };
        let w = q.width();
        for (r, &i) in active.iter().enumerate() {
            let rng = &mut rngs[i];
            let a = if eps > 0.0 && rng.uniform() < eps { Action::Query(rng.below(k)) } else { q.greedy(&out[r * w..(r + 1) * w]) };
            match a {
                Action::Stop => {
                    if !mode.allows_stop() {
                        return Err(Error::PolicyEmittedStopInFixedBudget);
                    }
                    hs[i].push(Action::Stop, Observation::blank(0))?;
                    end[i] = Some(StopReason::StopAction);
                }
                Action::Query(a) => {
                    let x = envs[i].step(&hs[i], a, rng);
                    hs[i].push(Action::Query(a), x)?;
                    prev[i] = Some(a);
                    if envs[i].is_terminal(&hs[i]) {
                        end[i] = Some(StopReason::EnvTerminal);
                    } else if hs[i].n_queries() >= horizon {
                        end[i] = Some(StopReason::Horizon);
                    }
                }
            }
        }
    }
    let recs: Vec<Option<Hypothesis>> = match infer {
        Some(net) => recommend_batch(net, &hs.iter().collect::<Vec<_>>()).into_iter().map(Some).collect(),
        None => vec![None; n],
    };
    Ok(hs
        .into_iter()
        .zip(envs)
        .zip(end)
        .zip(recs)
        .map(|(((history, e), end), recommended)| Episode {
            history,
            h_star: e.h_star,
            end: end.expect("every episode ends"),
            recommended,
        })
        .collect())
}

/// Most likely hypothesis under `net` for each history.
pub fn recommend_batch<S: Scalar>(net: &InferenceNet<S>, hs: &[&History]) -> Vec<Hypothesis> {
    let mut out = Vec::with_capacity(hs.len());
    for chunk in hs.chunks(256) {
        let b = net.enc.batch::<S>(chunk);
        let logits = net.model.forward(&b).0;
        let nh = net.n_hyp();
        for (s, &t) in b.starts.iter().zip(&b.lens) {
            let row: Vec<f64> = logits[(s + t - 1) * nh..(s + t) * nh].iter().map(|v| v.f64()).collect();
            out.push(argmax_prob(&row).0);
        }
    }
    out
}

/// Greedy trained explorer as a `Policy`, decoding incrementally.
pub struct IcpePolicy<'a, S> {
    pub q: &'a QNet<S>,
    pub infer: &'a InferenceNet<S>,
    state: KvState<S>,
}

impl<'a, S: Scalar> IcpePolicy<'a, S> {
    pub fn new(q: &'a QNet<S>, infer: &'a InferenceNet<S>) -> Self {
        Self { q, infer, state: q.model.start() }
    }
}

impl<S: Scalar> Policy for IcpePolicy<'_, S> {
    fn reset(&mut self) {
        self.state = self.q.model.start();
    }

    fn act(&mut self, h: &History, _rng: &mut RandomSource) -> Result<Action> {
        if self.state.len > h.t() {
            self.state = self.q.model.start();
        }
        let mut out = Vec::new();
        while self.state.len < h.t() {
            let s = self.state.len + 1;
            let prev = if s == 1 { None } else { Some(h.steps[s - 2].0.index(self.q.enc.k)) };
            let mut tok = Vec::new();
            self.q.enc.token::<S>(prev, h.obs(s), &mut tok);
            out = self.q.model.step(&mut self.state, &tok);
        }
        if out.is_empty() {
            self.state = self.q.model.start();
            return self.act(h, _rng);
        }
        Ok(self.q.greedy(&out))
    }

    fn recommend(&mut self, h: &History) -> Hypothesis {
        recommend_batch(self.infer, &[h])[0]
    }
}
