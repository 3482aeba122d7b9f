//! Environment families and their priors.

use serde::{Deserialize, Serialize};

use crate::core::{Action, Environment, History, Hypothesis, Observation};
use crate::error::{Error, Result};
use crate::rng::RandomSource;

/// Attempts allowed when rejection-sampling the min-gap prior.
pub const REJECTION_BUDGET: usize = 1_000_000;

/// Index-to-mean encoding used by magic arms. Indices are 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Phi {
    /// `phi(i) = i / K`
    Linear,
    /// `phi(i) = 1 / i`
    Inverse,
}

impl Phi {
    pub fn eval(self, i: usize, k: usize) -> f64 {
        match self {
            Phi::Linear => i as f64 / k as f64,
            Phi::Inverse => 1.0 / i as f64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphKind {
    LoopyStar { p: f64, q: f64, r: f64 },
    Ring { p: f64 },
    LooplessClique { p: f64 },
}

/// Reveal probabilities: playing `u` reveals arm `v` with probability `g[u][v]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackGraph {
    pub g: Vec<Vec<f64>>,
}

impl FeedbackGraph {
    pub fn k(&self) -> usize {
        self.g.len()
    }
}

pub fn default_graph(kind: GraphKind, k: usize) -> Result<FeedbackGraph> {
    if k < 3 {
        return Err(Error::BadGraphParams(format!("need K >= 3, got {k}")));
    }
    let check = |name: &str, x: f64| {
        if (0.0..=1.0).contains(&x) {
            Ok(())
        } else {
            Err(Error::BadGraphParams(format!("{name}={x} outside [0,1]")))
        }
    };
    let mut g = vec![vec![0.0; k]; k];
    match kind {
        GraphKind::LoopyStar { p, q, r } => {
            check("p", p)?;
            check("q", q)?;
            check("r", r)?;
            g[0][0] = q;
            for v in 1..k - 1 {
                g[0][v] = r;
                g[v][v] = (1.0 - 2.0 * p).max(0.0);
            }
            g[0][k - 1] = p;
            g[k - 1][k - 1] = 1.0 - p;
        }
        GraphKind::Ring { p } => {
            check("p", p)?;
            for u in 0..k {
                g[u][(u + 1) % k] = p;
                g[u][(u + k - 1) % k] = 1.0 - p;
            }
        }
        GraphKind::LooplessClique { p } => {
            check("p", p)?;
            for u in 0..k {
                let u1 = (u + 1) as f64;
                for v in 0..k {
                    if u == v {
                        continue;
                    }
                    let v1 = v + 1;
                    g[u][v] = if v1 % 2 == 1 { p / u1 } else { 1.0 - p / u1 };
                }
            }
        }
    }
    Ok(FeedbackGraph { g })
}

/// Family parameters of a prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// Gaussian arms, means uniform on `[0, upper]` conditioned on a top-two gap of at least `delta0`.
    GaussianMinGap { k: usize, sigma: f64, delta0: f64, upper: f64 },
    /// Noiseless arms with means uniform on `[0, 1]`.
    Deterministic { k: usize },
    /// Arm 0 is magic with mean `phi(a*)`; the others are uniform on `[lo, hi]`.
    MagicAction { k: usize, sigma_m: f64, sigma: f64, phi: Phi, lo: f64, hi: f64 },
    /// Chain of `n` magic arms starting at arm 0.
    MagicChain { k: usize, n: usize, sigma: f64, lo: f64, hi: f64 },
    FeedbackGraph { k: usize, graph: GraphKind, sigma: f64 },
    BinarySearch { k: usize },
    MagicRoom { k: usize },
}

impl Family {
    pub fn gaussian_min_gap(k: usize) -> Self {
        Family::GaussianMinGap { k, sigma: 0.5, delta0: 0.4, upper: 0.4 * k as f64 }
    }

    pub fn magic_action(k: usize, sigma_m: f64) -> Self {
        Family::MagicAction { k, sigma_m, sigma: 1.0 - sigma_m, phi: Phi::Linear, lo: 1.0, hi: 5.0 }
    }

    pub fn magic_chain(n: usize) -> Self {
        Family::MagicChain { k: 10, n, sigma: 0.0, lo: 1.0, hi: 2.0 }
    }

    pub fn feedback_graph(k: usize, graph: GraphKind) -> Self {
        Family::FeedbackGraph { k, graph, sigma: 0.2f64.sqrt() }
    }

    /// Number of query actions.
    pub fn k(&self) -> usize {
        match *self {
            Family::GaussianMinGap { k, .. }
            | Family::Deterministic { k }
            | Family::MagicAction { k, .. }
            | Family::MagicChain { k, .. }
            | Family::FeedbackGraph { k, .. }
            | Family::BinarySearch { k } => k,
            Family::MagicRoom { .. } => ROOM_ACTIONS,
        }
    }

    pub fn n_hypotheses(&self) -> usize {
        match *self {
            Family::MagicRoom { .. } => 4,
            _ => self.k(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        match *self {
            Family::FeedbackGraph { k, .. } => k,
            Family::MagicRoom { .. } => 5,
            _ => 1,
        }
    }

    pub fn tag(&self) -> FamilyTag {
        match self {
            Family::GaussianMinGap { .. } => FamilyTag::GaussianMinGap,
            Family::Deterministic { .. } => FamilyTag::Deterministic,
            Family::MagicAction { .. } => FamilyTag::MagicAction,
            Family::MagicChain { .. } => FamilyTag::MagicChain,
            Family::FeedbackGraph { .. } => FamilyTag::FeedbackGraph,
            Family::BinarySearch { .. } => FamilyTag::BinarySearch,
            Family::MagicRoom { .. } => FamilyTag::MagicRoom,
        }
    }

    /// Whether the hypothesis set coincides with the query actions.
    pub fn is_bai(&self) -> bool {
        !matches!(self, Family::BinarySearch { .. } | Family::MagicRoom { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FamilyTag {
    GaussianMinGap,
    Deterministic,
    MagicAction,
    MagicChain,
    FeedbackGraph,
    BinarySearch,
    MagicRoom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedModel {
    pub model: EnvModel,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Support {
    Continuous,
    FiniteGrid(Vec<WeightedModel>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub family: Family,
    pub support: Support,
}

impl PriorSpec {
    pub fn continuous(family: Family) -> Self {
        Self { family, support: Support::Continuous }
    }

    /// Finite prior with the given weights, normalized.
    pub fn finite(family: Family, models: Vec<(EnvModel, f64)>) -> Result<Self> {
        let total: f64 = models.iter().map(|m| m.1).sum();
        if models.is_empty() || !(total > 0.0) {
            return Err(Error::GridTooCoarse { survivors: models.len() });
        }
        let support = models.into_iter().map(|(model, w)| WeightedModel { model, weight: w / total }).collect();
        Ok(Self { family, support: Support::FiniteGrid(support) })
    }

    /// Uniform prior over the given models.
    pub fn uniform(family: Family, models: Vec<EnvModel>) -> Result<Self> {
        Self::finite(family, models.into_iter().map(|m| (m, 1.0)).collect())
    }

    /// Uniform prior over all `k` binary-search targets.
    pub fn binary_search(k: usize) -> Self {
        let models = (0..k).map(|t| EnvModel::binary_search(k, t)).collect();
        Self::uniform(Family::BinarySearch { k }, models).expect("k >= 1")
    }

    /// Deterministic models with the given mean vectors, uniform weights.
    pub fn deterministic_models(means: &[Vec<f64>]) -> Result<Self> {
        let k = means[0].len();
        let models = means.iter().map(|m| EnvModel::deterministic(m.clone())).collect::<Result<Vec<_>>>()?;
        Self::uniform(Family::Deterministic { k }, models)
    }

    /// Gaussian models with shared noise, uniform weights.
    pub fn gaussian_models(means: &[Vec<f64>], sigma: f64) -> Result<Self> {
        let k = means[0].len();
        let models = means.iter().map(|m| EnvModel::gaussian(m.clone(), sigma)).collect::<Result<Vec<_>>>()?;
        let upper = means.iter().flatten().cloned().fold(0.0, f64::max);
        Self::uniform(Family::GaussianMinGap { k, sigma, delta0: 0.0, upper }, models)
    }

    /// The two-model `{(1,0), (0,1)}` deterministic prior.
    pub fn two_model_det() -> Self {
        Self::deterministic_models(&[vec![1.0, 0.0], vec![0.0, 1.0]]).expect("valid")
    }

    pub fn k(&self) -> usize {
        self.family.k()
    }

    pub fn n_hypotheses(&self) -> usize {
        self.family.n_hypotheses()
    }

    pub fn obs_dim(&self) -> usize {
        self.family.obs_dim()
    }

    pub fn models(&self) -> Option<&[WeightedModel]> {
        match &self.support {
            Support::FiniteGrid(m) => Some(m),
            Support::Continuous => None,
        }
    }

    /// Marginal prior mass of each hypothesis (finite supports only).
    pub fn hypothesis_marginal(&self) -> Option<Vec<f64>> {
        let models = self.models()?;
        let mut p = vec![0.0; self.n_hypotheses()];
        for m in models {
            p[m.model.h_star] += m.weight;
        }
        Some(p)
    }
}

/// Structure beyond per-arm means and noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Structure {
    Plain,
    /// Arm 0 is magic.
    Magic,
    /// Chain of magic arm indices; the first is known to the learner.
    Chain(Vec<usize>),
    Graph(FeedbackGraph),
    Target(usize),
    Room(RoomLayout),
}

/// One environment instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvModel {
    pub family: FamilyTag,
    pub k: usize,
    pub n_hyp: usize,
    pub means: Vec<f64>,
    pub noise: Vec<f64>,
    pub structure: Structure,
    pub h_star: Hypothesis,
}

/// Per-arm law of a scalar observation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScalarLaw {
    Gaussian { mean: f64, sd: f64 },
    Point(f64),
}

impl ScalarLaw {
    fn from_mean_sd(mean: f64, sd: f64) -> Self {
        if sd > 0.0 {
            ScalarLaw::Gaussian { mean, sd }
        } else {
            ScalarLaw::Point(mean)
        }
    }

    /// Density (Gaussian) or probability (point mass) of `x`.
    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            ScalarLaw::Gaussian { mean, sd } => {
                let z = (x - mean) / sd;
                -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            }
            ScalarLaw::Point(v) => {
                if x == v {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn sample(&self, rng: &mut RandomSource) -> f64 {
        match *self {
            ScalarLaw::Gaussian { mean, sd } => rng.normal(mean, sd),
            ScalarLaw::Point(v) => v,
        }
    }
}

/// Argmax with an error on exact ties.
pub fn unique_argmax(xs: &[f64]) -> Result<usize> {
    let mut best = 0;
    for i in 1..xs.len() {
        if xs[i] > xs[best] {
            best = i;
        }
    }
    if xs.iter().enumerate().any(|(i, &x)| i != best && x == xs[best]) {
        return Err(Error::TieAtOptimum);
    }
    Ok(best)
}

impl EnvModel {
    pub fn gaussian(means: Vec<f64>, sigma: f64) -> Result<Self> {
        let k = means.len();
        let h_star = unique_argmax(&means)?;
        Ok(Self {
            family: FamilyTag::GaussianMinGap,
            k,
            n_hyp: k,
            noise: vec![sigma; k],
            means,
            structure: Structure::Plain,
            h_star,
        })
    }

    pub fn deterministic(means: Vec<f64>) -> Result<Self> {
        let mut m = Self::gaussian(means, 0.0)?;
        m.family = FamilyTag::Deterministic;
        Ok(m)
    }

    /// Magic-action model from the non-magic means (entries 1..K of `means`; entry 0 is ignored).
    pub fn magic_action(mut means: Vec<f64>, sigma_m: f64, sigma: f64, phi: Phi) -> Result<Self> {
        let k = means.len();
        let best = 1 + unique_argmax(&means[1..])?;
        means[0] = phi.eval(best + 1, k);
        let mut noise = vec![sigma; k];
        noise[0] = sigma_m;
        Ok(Self { family: FamilyTag::MagicAction, k, n_hyp: k, means, noise, structure: Structure::Magic, h_star: best })
    }

    /// Magic-chain model: `chain[0]` is known, values of `means` at chain indices are overwritten.
    pub fn magic_chain(mut means: Vec<f64>, chain: Vec<usize>, sigma: f64) -> Result<Self> {
        let k = means.len();
        let regular: Vec<f64> =
            (0..k).map(|a| if chain.contains(&a) { f64::NEG_INFINITY } else { means[a] }).collect();
        let best = unique_argmax(&regular)?;
        for j in 0..chain.len() {
            let target = if j + 1 < chain.len() { chain[j + 1] } else { best };
            means[chain[j]] = Phi::Linear.eval(target + 1, k);
        }
        let mut noise = vec![sigma; k];
        for &c in &chain {
            noise[c] = 0.0;
        }
        Ok(Self { family: FamilyTag::MagicChain, k, n_hyp: k, means, noise, structure: Structure::Chain(chain), h_star: best })
    }

    pub fn feedback(means: Vec<f64>, graph: FeedbackGraph, sigma: f64) -> Result<Self> {
        let k = means.len();
        if graph.k() != k {
            return Err(Error::BadGraphParams(format!("graph is {}x{}, K={k}", graph.k(), graph.k())));
        }
        let h_star = unique_argmax(&means)?;
        Ok(Self { family: FamilyTag::FeedbackGraph, k, n_hyp: k, noise: vec![sigma; k], means, structure: Structure::Graph(graph), h_star })
    }

    pub fn binary_search(k: usize, target: usize) -> Self {
        Self {
            family: FamilyTag::BinarySearch,
            k,
            n_hyp: k,
            means: (0..k).map(|a| binary_search_symbol(a, target)).collect(),
            noise: vec![0.0; k],
            structure: Structure::Target(target),
            h_star: target,
        }
    }

    pub fn magic_room(layout: RoomLayout) -> Self {
        let h_star = layout.door();
        Self {
            family: FamilyTag::MagicRoom,
            k: ROOM_ACTIONS,
            n_hyp: 4,
            means: Vec::new(),
            noise: Vec::new(),
            structure: Structure::Room(layout),
            h_star,
        }
    }

    /// Law of the scalar reward of arm `a`; `None` for vector-valued families.
    pub fn scalar_law(&self, a: usize) -> Option<ScalarLaw> {
        match self.structure {
            Structure::Graph(_) | Structure::Room(_) => None,
            _ => Some(ScalarLaw::from_mean_sd(self.means[a], self.noise[a])),
        }
    }

    /// Log-likelihood of observing `x` after query `a` given history `h`.
    pub fn log_likelihood(&self, h: &History, a: usize, x: &Observation) -> f64 {
        match &self.structure {
            Structure::Graph(graph) => {
                let mut ll = 0.0;
                for v in 0..self.k {
                    let p = graph.g[a][v];
                    if x.mask[v] {
                        ll += p.ln() + ScalarLaw::from_mean_sd(self.means[v], self.noise[v]).log_density(x.values[v]);
                    } else {
                        ll += (1.0 - p).ln();
                    }
                }
                ll
            }
            Structure::Room(layout) => {
                let prev = h.obs(h.t());
                let (next, reward_possible) = layout.transition(prev, a);
                if next.values[..4] != x.values[..4] {
                    return f64::NEG_INFINITY;
                }
                let r = x.values[4];
                match (reward_possible, r == 1.0) {
                    (true, true) => ROOM_REWARD_P.ln(),
                    (true, false) => (1.0 - ROOM_REWARD_P).ln(),
                    (false, true) => f64::NEG_INFINITY,
                    (false, false) => 0.0,
                }
            }
            _ => self.scalar_law(a).expect("scalar family").log_density(x.value()),
        }
    }

    /// The family's ground-truth hypothesis, recomputed from the structure.
    pub fn true_hypothesis(&self) -> Result<Hypothesis> {
        match &self.structure {
            Structure::Target(t) => Ok(*t),
            Structure::Room(layout) => Ok(layout.door()),
            Structure::Magic => Ok(1 + unique_argmax(&self.means[1..])?),
            Structure::Chain(chain) => {
                let regular: Vec<f64> = (0..self.k)
                    .map(|a| if chain.contains(&a) { f64::NEG_INFINITY } else { self.means[a] })
                    .collect();
                unique_argmax(&regular)
            }
            _ => unique_argmax(&self.means),
        }
    }
}

pub fn binary_search_symbol(a: usize, target: usize) -> f64 {
    match a.cmp(&target) {
        std::cmp::Ordering::Less => 1.0,
        std::cmp::Ordering::Greater => -1.0,
        std::cmp::Ordering::Equal => 0.0,
    }
}

pub fn true_hypothesis(env: &EnvModel) -> Result<Hypothesis> {
    env.true_hypothesis()
}

impl Environment for EnvModel {
    fn k(&self) -> usize {
        self.k
    }

    fn n_hypotheses(&self) -> usize {
        self.n_hyp
    }

    fn obs_dim(&self) -> usize {
        match &self.structure {
            Structure::Graph(_) => self.k,
            Structure::Room(_) => 5,
            _ => 1,
        }
    }

    fn initial_observation(&self, _rng: &mut RandomSource) -> Observation {
        match &self.structure {
            Structure::Room(layout) => layout.initial_observation(),
            _ => Observation::blank(self.obs_dim()),
        }
    }

    fn step(&self, h: &History, a: usize, rng: &mut RandomSource) -> Observation {
        env_step(self, h, Action::Query(a), rng)
    }

    fn h_star(&self) -> Hypothesis {
        self.h_star
    }

    fn is_terminal(&self, h: &History) -> bool {
        match &self.structure {
            Structure::Room(layout) => {
                h.t() >= 2 && {
                    let (a, _) = h.steps[h.steps.len() - 1];
                    a == Action::Query(ROOM_EXIT) && layout.door_at(h.obs(h.t() - 1)).is_some()
                }
            }
            _ => false,
        }
    }
}

/// Draw the next observation for query `a`.
pub fn env_step(env: &EnvModel, h: &History, a: Action, rng: &mut RandomSource) -> Observation {
    let a = match a {
        Action::Query(a) => a,
        Action::Stop => panic!("env_step called with the stop action"),
    };
    match &env.structure {
        Structure::Graph(graph) => {
            let mut values = vec![0.0; env.k];
            let mut mask = vec![false; env.k];
            for v in 0..env.k {
                if rng.bernoulli(graph.g[a][v]) {
                    mask[v] = true;
                    values[v] = rng.normal(env.means[v], env.noise[v]);
                }
            }
            Observation::masked(values, mask)
        }
        Structure::Room(layout) => {
            let (mut next, reward_possible) = layout.transition(h.obs(h.t()), a);
            if reward_possible && rng.bernoulli(ROOM_REWARD_P) {
                next.values[4] = 1.0;
            }
            next
        }
        _ => Observation::scalar(env.scalar_law(a).expect("scalar family").sample(rng)),
    }
}

/// Draw an environment from the prior.
pub fn sample_env(spec: &PriorSpec, rng: &mut RandomSource) -> Result<EnvModel> {
    if let Support::FiniteGrid(models) = &spec.support {
        let u = rng.uniform();
        let mut acc = 0.0;
        for m in models {
            acc += m.weight;
            if u < acc {
                return Ok(m.model.clone());
            }
        }
        return Ok(models[models.len() - 1].model.clone());
    }
    match spec.family {
        Family::GaussianMinGap { k, sigma, delta0, upper } => {
            for _ in 0..REJECTION_BUDGET {
                let means: Vec<f64> = (0..k).map(|_| rng.uniform_in(0.0, upper)).collect();
                if top_two_gap(&means) >= delta0 {
                    return EnvModel::gaussian(means, sigma);
                }
            }
            Err(Error::RejectionBudgetExhausted { attempts: REJECTION_BUDGET })
        }
        Family::Deterministic { k } => EnvModel::deterministic((0..k).map(|_| rng.uniform()).collect()),
        Family::MagicAction { k, sigma_m, sigma, phi, lo, hi } => {
            let means = (0..k).map(|_| rng.uniform_in(lo, hi)).collect();
            EnvModel::magic_action(means, sigma_m, sigma, phi)
        }
        Family::MagicChain { k, n, sigma, lo, hi } => {
            if n == 0 || n >= k {
                return Err(Error::InvalidConfig(format!("chain length {n} for K={k}")));
            }
            let means = (0..k).map(|_| rng.uniform_in(lo, hi)).collect();
            let mut rest: Vec<usize> = (1..k).collect();
            let mut chain = vec![0];
            for _ in 1..n {
                let j = rng.below(rest.len());
                chain.push(rest.swap_remove(j));
            }
            EnvModel::magic_chain(means, chain, sigma)
        }
        Family::FeedbackGraph { k, graph, sigma } => {
            let g = default_graph(graph, k)?;
            EnvModel::feedback((0..k).map(|_| rng.uniform()).collect(), g, sigma)
        }
        Family::BinarySearch { k } => Ok(EnvModel::binary_search(k, rng.below(k))),
        Family::MagicRoom { k } => Ok(EnvModel::magic_room(RoomLayout::sample(k, rng))),
    }
}

/// Difference between the largest and second-largest entries.
pub fn top_two_gap(means: &[f64]) -> f64 {
    let mut first = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &m in means {
        if m > first {
            second = first;
            first = m;
        } else if m > second {
            second = m;
        }
    }
    first - second
}

// Magic Room

pub const ROOM_UP: usize = 0;
pub const ROOM_DOWN: usize = 1;
pub const ROOM_LEFT: usize = 2;
pub const ROOM_RIGHT: usize = 3;
pub const ROOM_EXIT: usize = 4;
pub const ROOM_ACTIONS: usize = 5;
/// Probability that exiting through the correct door pays 1.
pub const ROOM_REWARD_P: f64 = 0.25;

/// Door indices.
pub const DOOR_TOP: usize = 0;
pub const DOOR_BOTTOM: usize = 1;
pub const DOOR_LEFT: usize = 2;
pub const DOOR_RIGHT: usize = 3;

/// Fixed map from the clue pair to the correct door.
pub fn clue_door(c1: i8, c2: i8) -> usize {
    match (c1, c2) {
        (-1, -1) => DOOR_TOP,
        (-1, 1) => DOOR_BOTTOM,
        (1, -1) => DOOR_LEFT,
        (1, 1) => DOOR_RIGHT,
        _ => panic!("clue values must be -1 or 1"),
    }
}

/// `K x K` room with two clues. Coordinates are `(z, y)` with `y` growing upward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomLayout {
    pub k: usize,
    pub clue_pos: [(usize, usize); 2],
    pub clue_val: [i8; 2],
}

impl RoomLayout {
    pub fn start(&self) -> (usize, usize) {
        (self.k / 2, self.k / 2)
    }

    /// Episode horizon `K^2`.
    pub fn horizon(&self) -> usize {
        self.k * self.k
    }

    pub fn door(&self) -> usize {
        clue_door(self.clue_val[0], self.clue_val[1])
    }

    /// Cell adjacent to each door.
    pub fn door_cell(&self, door: usize) -> (usize, usize) {
        let (k, m) = (self.k, self.k / 2);
        match door {
            DOOR_TOP => (m, k - 1),
            DOOR_BOTTOM => (m, 0),
            DOOR_LEFT => (0, m),
            _ => (k - 1, m),
        }
    }

    /// Door reachable from the position in `x`, if any.
    pub fn door_at(&self, x: &Observation) -> Option<usize> {
        let pos = (x.values[0] as usize, x.values[1] as usize);
        (0..4).find(|&d| self.door_cell(d) == pos)
    }

    pub fn sample(k: usize, rng: &mut RandomSource) -> Self {
        assert!(k >= 4, "room needs K >= 4");
        let start = (k / 2, k / 2);
        let mut cells = Vec::new();
        for z in 1..k - 1 {
            for y in 1..k - 1 {
                if (z, y) != start {
                    cells.push((z, y));
                }
            }
        }
        let i = rng.below(cells.len());
        let p1 = cells.swap_remove(i);
        let p2 = cells[rng.below(cells.len())];
        let v = |rng: &mut RandomSource| if rng.bernoulli(0.5) { 1 } else { -1 };
        let c1 = v(rng);
        let c2 = v(rng);
        Self { k, clue_pos: [p1, p2], clue_val: [c1, c2] }
    }

    fn observe(&self, pos: (usize, usize), mut clues: [f64; 2]) -> Observation {
        for i in 0..2 {
            if self.clue_pos[i] == pos {
                clues[i] = self.clue_val[i] as f64;
            }
        }
        Observation::full(vec![pos.0 as f64, pos.1 as f64, clues[0], clues[1], 0.0])
    }

    pub fn initial_observation(&self) -> Observation {
        self.observe(self.start(), [0.0, 0.0])
    }

    /// Deterministic part of a move from the state in `prev`; the flag says whether
    /// the move exits through the correct door (reward is then Bernoulli).
    pub fn transition(&self, prev: &Observation, a: usize) -> (Observation, bool) {
        let (z, y) = (prev.values[0] as usize, prev.values[1] as usize);
        let clues = [prev.values[2], prev.values[3]];
        let k = self.k;
        let pos = match a {
            ROOM_UP if y + 1 < k => (z, y + 1),
            ROOM_DOWN if y > 0 => (z, y - 1),
            ROOM_LEFT if z > 0 => (z - 1, y),
            ROOM_RIGHT if z + 1 < k => (z + 1, y),
            _ => (z, y),
        };
        let correct_exit = a == ROOM_EXIT && self.door_at(prev) == Some(self.door());
        (self.observe(pos, clues), correct_exit)
    }
}
