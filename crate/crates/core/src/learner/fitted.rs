//! Idealized trainers on finite priors: a lookup-table Q learner driven by the
//! same targets as the network losses, and stage-wise linear fitted Q.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::core::{Action, EpisodeMode};
use crate::error::{Error, Result};
use crate::exact::{ExactProblem, NodeKey};
use crate::posterior::argmax_prob;
use crate::rng::RandomSource;

struct Node {
    key: NodeKey,
    post: Vec<f64>,
    /// Largest hypothesis probability.
    r: f64,
}

/// Every reachable key by depth, `0..=n`.
fn enumerate(p: &ExactProblem, n: usize, limit: usize) -> Result<Vec<Vec<Node>>> {
    let root_r = argmax_prob(&p.hyp_probs(&p.prior)).1;
    let mut levels = vec![vec![Node { key: Vec::new(), post: p.prior.clone(), r: root_r }]];
    let mut total = 1;
    for _ in 0..n {
        let mut next = Vec::new();
        for node in levels.last().unwrap() {
            for a in 0..p.k {
                for (c, &pc) in p.predictive(&node.post, a).iter().enumerate() {
                    if pc <= 0.0 {
                        continue;
                    }
                    let post: Vec<f64> = node.post.iter().enumerate().map(|(m, w)| w * p.cp[m][a][c] / pc).collect();
                    let mut key = node.key.clone();
                    key.push((a as u16, c as u16));
                    let r = argmax_prob(&p.hyp_probs(&post)).1;
                    next.push(Node { key, post, r });
                    total += 1;
                    if total > limit {
                        return Err(Error::StateSpaceTooLarge { limit });
                    }
                }
            }
        }
        levels.push(next);
    }
    Ok(levels)
}

fn child_key(key: &[(u16, u16)], a: usize, c: usize) -> NodeKey {
    let mut k = key.to_vec();
    k.push((a as u16, c as u16));
    k
}

/// Lookup-table action values trained by full expected sweeps with a frozen
/// target copy; the inference rule is the exact posterior.
#[derive(Clone, Debug)]
pub struct TabularQ {
    pub mode: EpisodeMode,
    pub k: usize,
    pub cost: f64,
    pub gamma: f64,
    pub q: HashMap<NodeKey, Vec<f64>>,
    r: HashMap<NodeKey, f64>,
    posts: HashMap<NodeKey, Vec<f64>>,
    depth_keys: Vec<Vec<NodeKey>>,
}

impl TabularQ {
    /// `cost` is only used in fixed-confidence mode.
    pub fn new(p: &ExactProblem, mode: EpisodeMode, cost: f64) -> Result<Self> {
        mode.validate()?;
        let n = mode.horizon();
        let levels = enumerate(p, n, p.node_limit)?;
        let width = p.k + mode.allows_stop() as usize;
        let mut q = HashMap::new();
        let mut r = HashMap::new();
        let mut posts = HashMap::new();
        let mut depth_keys = Vec::new();
        for (t, level) in levels.into_iter().enumerate() {
            let mut keys = Vec::with_capacity(level.len());
            for node in level {
                let mut row = vec![0.0; width];
                if t == n {
                    row[..p.k].iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
                }
                q.insert(node.key.clone(), row);
                r.insert(node.key.clone(), node.r);
                posts.insert(node.key.clone(), node.post);
                keys.push(node.key);
            }
            depth_keys.push(keys);
        }
        Ok(Self { mode, k: p.k, cost, gamma: 1.0, q, r, posts, depth_keys })
    }

    fn max_q(table: &HashMap<NodeKey, Vec<f64>>, key: &[(u16, u16)]) -> f64 {
        table[key].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// One expected-gradient sweep with step `lr` toward the frozen-copy targets.
    pub fn sweep(&mut self, p: &ExactProblem, lr: f64) {
        let frozen = self.q.clone();
        let n = self.mode.horizon();
        let fc = self.mode.allows_stop();
        for t in 0..=n {
            for key in &self.depth_keys[t] {
                let mut targets: Vec<Option<f64>> = vec![None; self.k + fc as usize];
                if fc {
                    targets[self.k] = Some(self.r[key]);
                }
                if t < n {
                    let post = &self.posts[key];
                    for (a, tg) in targets.iter_mut().enumerate().take(self.k) {
                        let mut ev = 0.0;
                        for (c, &pc) in p.predictive(post, a).iter().enumerate() {
                            if pc <= 0.0 {
                                continue;
                            }
                            let ck = child_key(key, a, c);
                            let boot = if t + 1 == n { self.r[&ck] } else { Self::max_q(&frozen, &ck) };
                            ev += pc * boot;
                        }
                        *tg = Some(if fc { -self.cost + self.gamma * ev } else { self.gamma * ev });
                    }
                }
                let row = self.q.get_mut(key).unwrap();
                for (v, tg) in row.iter_mut().zip(targets) {
                    if let Some(y) = tg {
                        *v += lr * (y - *v);
                    }
                }
            }
        }
    }

    pub fn values(&self, key: &[(u16, u16)]) -> Option<&[f64]> {
        self.q.get(key).map(|v| v.as_slice())
    }

    /// Greedy action; stop wins ties.
    pub fn greedy(&self, key: &[(u16, u16)]) -> Option<Action> {
        let row = self.q.get(key)?;
        let mut best = 0;
        for a in 1..self.k {
            if row[a] > row[best] {
                best = a;
            }
        }
        if self.mode.allows_stop() && row[self.k] >= row[best] {
            return Some(Action::Stop);
        }
        Some(Action::Query(best))
    }

    pub fn keys(&self) -> impl Iterator<Item = &NodeKey> {
        self.depth_keys.iter().flatten()
    }
}

/// Features of a (history key, query) pair at a given stage.
pub trait FeatureMap {
    fn dim(&self) -> usize;
    fn features(&self, key: &[(u16, u16)], a: usize) -> Vec<f64>;
}

/// Indicator of each enumerated (key, query) pair.
#[derive(Clone, Debug)]
pub struct OneHotFeatures {
    index: HashMap<(NodeKey, usize), usize>,
}

impl OneHotFeatures {
    pub fn new(p: &ExactProblem, n: usize) -> Result<Self> {
        let levels = enumerate(p, n.saturating_sub(1), p.node_limit)?;
        let mut index = HashMap::new();
        for node in levels.iter().flatten() {
            for a in 0..p.k {
                let i = index.len();
                index.insert((node.key.clone(), a), i);
            }
        }
        Ok(Self { index })
    }
}

impl FeatureMap for OneHotFeatures {
    fn dim(&self) -> usize {
        self.index.len()
    }

    fn features(&self, key: &[(u16, u16)], a: usize) -> Vec<f64> {
        let mut f = vec![0.0; self.index.len()];
        if let Some(&i) = self.index.get(&(key.to_vec(), a)) {
            f[i] = 1.0;
        }
        f
    }
}

/// A single constant feature.
#[derive(Clone, Copy, Debug, Default)]
pub struct ConstantFeatures;

impl FeatureMap for ConstantFeatures {
    fn dim(&self) -> usize {
        1
    }

    fn features(&self, _key: &[(u16, u16)], _a: usize) -> Vec<f64> {
        vec![1.0]
    }
}

/// Sampling distribution over (key, query) pairs of a stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BufferDist {
    /// Uniform over reachable keys of the stage and over queries.
    UniformKeys,
    /// Keys reached by uniformly random queries, then a uniform query.
    UniformPolicy,
}

/// Stage-wise linear action values, truncated to `[0, 1]` when evaluated.
#[derive(Clone, Debug)]
pub struct FittedQ {
    pub n: usize,
    pub k: usize,
    /// Weights of stages `0..n` (stage = number of queries made).
    pub weights: Vec<Vec<f64>>,
    /// Set when some normal equations were singular and ridge was added.
    pub ridge_used: bool,
}

impl FittedQ {
    pub fn q<F: FeatureMap + ?Sized>(&self, f: &F, key: &[(u16, u16)], a: usize) -> f64 {
        let x = f.features(key, a);
        x.iter().zip(&self.weights[key.len()]).map(|(a, b)| a * b).sum::<f64>().clamp(0.0, 1.0)
    }

    pub fn greedy<F: FeatureMap + ?Sized>(&self, f: &F, key: &[(u16, u16)]) -> usize {
        argmax_prob(&(0..self.k).map(|a| self.q(f, key, a)).collect::<Vec<_>>()).0
    }

    /// Exact expected final max-posterior of the greedy policy.
    pub fn policy_value<F: FeatureMap + ?Sized>(&self, f: &F, p: &ExactProblem) -> f64 {
        fn go<F: FeatureMap + ?Sized>(fq: &FittedQ, f: &F, p: &ExactProblem, key: &mut NodeKey, post: &[f64]) -> f64 {
            if key.len() == fq.n {
                return argmax_prob(&p.hyp_probs(post)).1;
            }
            let a = fq.greedy(f, key);
            let mut v = 0.0;
            for (c, &pc) in p.predictive(post, a).iter().enumerate() {
                if pc <= 0.0 {
                    continue;
                }
                let child: Vec<f64> = post.iter().enumerate().map(|(m, w)| w * p.cp[m][a][c] / pc).collect();
                key.push((a as u16, c as u16));
                v += pc * go(fq, f, p, key, &child);
                key.pop();
            }
            v
        }
        go(self, f, p, &mut Vec::new(), &p.prior)
    }
}

fn sample_cell(pred: &[f64], rng: &mut RandomSource) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    let mut last = 0;
    for (c, &pc) in pred.iter().enumerate() {
        if pc > 0.0 {
            acc += pc;
            last = c;
            if u < acc {
                return c;
            }
        }
    }
    last
}

/// Least squares with a `1e-8` ridge fallback; the flag reports the fallback.
fn solve_ls(x: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, bool) {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    if let Some(ch) = xtx.clone().cholesky() {
        let w = ch.solve(&xty);
        if w.iter().all(|v| v.is_finite()) && xtx.diagonal().iter().all(|&d| d > 1e-12) {
            return (w, false);
        }
    }
    let n = xtx.nrows();
    let ridge = xtx + DMatrix::<f64>::identity(n, n) * 1e-8;
    let w = ridge.cholesky().map(|c| c.solve(&xty)).unwrap_or_else(|| DVector::zeros(n));
    (w, true)
}

/// Fitted Q iteration over stages, last stage first in every epoch.
pub fn fitted_q_linear<F: FeatureMap + ?Sized>(
    p: &ExactProblem,
    n: usize,
    features: &F,
    mu: BufferDist,
    epochs: usize,
    batch: usize,
    rng: &mut RandomSource,
) -> Result<FittedQ> {
    if n == 0 || batch == 0 {
        return Err(Error::InvalidConfig("fitted Q needs n >= 1 and batch >= 1".into()));
    }
    let levels = enumerate(p, n - 1, p.node_limit)?;
    let d = features.dim();
    let mut fq = FittedQ { n, k: p.k, weights: vec![vec![0.0; d]; n], ridge_used: false };
    for _ in 0..epochs {
        for t in (0..n).rev() {
            let mut x = DMatrix::<f64>::zeros(batch, d);
            let mut y = DVector::<f64>::zeros(batch);
            for b in 0..batch {
                let (key, post) = match mu {
                    BufferDist::UniformKeys => {
                        let node = &levels[t][rng.below(levels[t].len())];
                        (node.key.clone(), node.post.clone())
                    }
                    BufferDist::UniformPolicy => {
                        let mut key = Vec::new();
                        let mut post = p.prior.clone();
                        for _ in 0..t {
                            let a = rng.below(p.k);
                            let pred = p.predictive(&post, a);
                            let c = sample_cell(&pred, rng);
                            post = post.iter().enumerate().map(|(m, w)| w * p.cp[m][a][c] / pred[c]).collect();
                            key.push((a as u16, c as u16));
                        }
                        (key, post)
                    }
                };
                let a = rng.below(p.k);
                let pred = p.predictive(&post, a);
                let c = sample_cell(&pred, rng);
                let child: Vec<f64> = post.iter().enumerate().map(|(m, w)| w * p.cp[m][a][c] / pred[c]).collect();
                let ck = child_key(&key, a, c);
                y[b] = if t + 1 == n {
                    argmax_prob(&p.hyp_probs(&child)).1
                } else {
                    (0..p.k).map(|a2| fq.q(features, &ck, a2)).fold(f64::NEG_INFINITY, f64::max)
                };
                for (j, v) in features.features(&key, a).into_iter().enumerate() {
                    x[(b, j)] = v;
                }
            }
            let (w, ridge) = solve_ls(&x, &y);
            fq.ridge_used |= ridge;
            fq.weights[t] = w.iter().copied().collect();
        }
    }
    Ok(fq)
}
