//! Training losses with their parameter gradients.

use crate::core::{Action, StopReason};
use crate::nn::log_softmax;
use crate::scalar::Scalar;

use super::{Episode, InferenceNet, QNet};

/// One stored trajectory and the 1-based positions at which losses apply.
#[derive(Clone, Debug)]
pub struct LossSeq<'a> {
    pub episode: &'a Episode,
    /// Pre-action positions `t` whose transition `(D_t, a_t)` is trained.
    pub q_positions: Vec<usize>,
    /// Positions at which the inference net is scored against `H*`.
    pub i_positions: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetOpts {
    pub gamma: f64,
    /// Train toward `ln max I` instead of `max I`.
    pub log_reward: bool,
    /// Query cap of the episode mode.
    pub horizon: usize,
}

impl TargetOpts {
    fn reward(&self, p: f64) -> f64 {
        if self.log_reward {
            p.max(1e-12).ln()
        } else {
            p
        }
    }
}

/// Negative log-likelihood of `H*`, averaged over all scored positions.
pub fn inference_loss<S: Scalar>(net: &InferenceNet<S>, seqs: &[LossSeq]) -> (f64, Vec<S>) {
    let hs: Vec<_> = seqs.iter().map(|s| &s.episode.history).collect();
    let b = net.enc.batch::<S>(&hs);
    let (logits, cache) = net.model.forward(&b);
    let nh = net.n_hyp();
    let lp = log_softmax(&logits, nh);
    let n: usize = seqs.iter().map(|s| s.i_positions.len()).sum();
    let mut d = vec![S::zero(); logits.len()];
    if n == 0 {
        return (0.0, vec![S::zero(); net.model.n_params()]);
    }
    let inv = S::one() / S::of_usize(n);
    let mut loss = 0.0;
    for (s, &start) in seqs.iter().zip(&b.starts) {
        for &t in &s.i_positions {
            let r = (start + t - 1) * nh;
            loss -= lp[r + s.episode.h_star].f64();
            for j in 0..nh {
                d[r + j] += lp[r + j].exp() * inv;
            }
            d[r + s.episode.h_star] -= inv;
        }
    }
    (loss / n as f64, net.model.backward(&cache, &d))
}

struct Evaluated<S> {
    q: Vec<S>,
    cache: crate::nn::Cache<S>,
    q_bar: Vec<S>,
    lp_bar: Vec<S>,
    starts: Vec<usize>,
}

fn evaluate<S: Scalar>(q: &QNet<S>, q_bar: &QNet<S>, i_bar: &InferenceNet<S>, seqs: &[LossSeq]) -> Evaluated<S> {
    let hs: Vec<_> = seqs.iter().map(|s| &s.episode.history).collect();
    let b = q.enc.batch::<S>(&hs);
    let (qo, cache) = q.model.forward(&b);
    let q_bar_o = q_bar.model.forward(&b).0;
    let lp_bar = i_bar.log_probs_batch(&b);
    Evaluated { q: qo, cache, q_bar: q_bar_o, lp_bar, starts: b.starts }
}

fn max_row<S: Scalar>(v: &[S], row: usize, w: usize) -> f64 {
    v[row * w..(row + 1) * w].iter().map(|x| x.f64()).fold(f64::NEG_INFINITY, f64::max)
}

/// Whether the transition out of position `t` lands on a history that must end.
fn lands_terminal(ep: &Episode, t: usize, horizon: usize) -> bool {
    t >= horizon || (ep.end == StopReason::EnvTerminal && t + 1 == ep.history.t())
}

/// Squared Bellman error for fixed-budget training. The bonus `max_H I` is paid
/// on entering the final history; earlier transitions bootstrap on `max_a Q`.
pub fn q_loss_fixed_budget<S: Scalar>(
    q: &QNet<S>,
    q_bar: &QNet<S>,
    i_bar: &InferenceNet<S>,
    seqs: &[LossSeq],
    opts: &TargetOpts,
) -> (f64, Vec<S>) {
    let ev = evaluate(q, q_bar, i_bar, seqs);
    let (w, nh) = (q.width(), i_bar.n_hyp());
    let mut items = Vec::new();
    for (s, &start) in seqs.iter().zip(&ev.starts) {
        for &t in &s.q_positions {
            if let Some(Action::Query(a)) = s.episode.action_at(t) {
                let next = start + t;
                let target = if lands_terminal(s.episode, t, opts.horizon) {
                    opts.reward(max_row(&ev.lp_bar, next, nh).exp())
                } else {
                    opts.gamma * max_row(&ev.q_bar, next, w)
                };
                items.push(((start + t - 1) * w + a, target));
            }
        }
    }
    finish(q, &ev, &items)
}

/// Fixed-confidence loss: per-step cost `c` on query transitions plus the
/// stop-head regression toward `max_H I(D_t)` on every sampled item.
pub fn q_loss_fixed_confidence<S: Scalar>(
    q: &QNet<S>,
    q_bar: &QNet<S>,
    i_bar: &InferenceNet<S>,
    seqs: &[LossSeq],
    c: f64,
    opts: &TargetOpts,
) -> (f64, Vec<S>) {
    assert!(q.has_stop, "fixed-confidence training needs a stop head");
    let ev = evaluate(q, q_bar, i_bar, seqs);
    let (w, nh, k) = (q.width(), i_bar.n_hyp(), q.enc.k);
    let mut items = Vec::new();
    let mut n_items = 0;
    for (s, &start) in seqs.iter().zip(&ev.starts) {
        for &t in &s.q_positions {
            n_items += 1;
            let row = start + t - 1;
            items.push((row * w + k, opts.reward(max_row(&ev.lp_bar, row, nh).exp())));
            if let Some(Action::Query(a)) = s.episode.action_at(t) {
                let next = row + 1;
                let boot = if lands_terminal(s.episode, t, opts.horizon) {
                    opts.reward(max_row(&ev.lp_bar, next, nh).exp())
                } else {
                    max_row(&ev.q_bar, next, w)
                };
                items.push((row * w + a, -c + opts.gamma * boot));
            }
        }
    }
    finish_n(q, &ev, &items, n_items)
}

fn finish<S: Scalar>(q: &QNet<S>, ev: &Evaluated<S>, items: &[(usize, f64)]) -> (f64, Vec<S>) {
    finish_n(q, ev, items, items.len())
}

fn finish_n<S: Scalar>(q: &QNet<S>, ev: &Evaluated<S>, items: &[(usize, f64)], n: usize) -> (f64, Vec<S>) {
    if n == 0 {
        return (0.0, vec![S::zero(); q.model.n_params()]);
    }
    let mut d = vec![S::zero(); ev.q.len()];
    let mut loss = 0.0;
    for &(idx, target) in items {
        let diff = ev.q[idx].f64() - target;
        loss += diff * diff;
        d[idx] += S::of(2.0 * diff / n as f64);
    }
    (loss / n as f64, q.model.backward(&ev.cache, &d))
}
