//! Bayes-optimal reference solvers by backward induction on quantized histories.
//!
//! A node is the sequence of `(action, cell)` pairs observed so far. Values are
//! computed depth-first with the posterior carried down the tree, and every
//! visited node is stored in a [`ValueTable`]. Zero-probability branches are
//! pruned.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::core::{Action, EpisodeMode, History, Hypothesis, Policy};
use crate::envs::{Family, PriorSpec};
use crate::error::{Error, Result};
use crate::posterior::{argmax_prob, ObsGrid};
use crate::rng::RandomSource;

/// Default guard on the number of stored history nodes.
pub const NODE_LIMIT: usize = 10_000_000;

pub type NodeKey = Vec<(u16, u16)>;

#[derive(Clone, Debug, PartialEq)]
pub struct TableEntry {
    pub v: f64,
    /// Query values, followed by the stop value in fixed-confidence tables.
    pub q: Vec<f64>,
    /// Maximal hypothesis posterior at this node.
    pub r: f64,
    /// Hypothesis posterior argmax at this node.
    pub map: Hypothesis,
    pub best: Action,
}

#[derive(Clone, Debug)]
pub struct ValueTable {
    pub entries: HashMap<NodeKey, TableEntry>,
    pub horizon: usize,
    pub mode: EpisodeMode,
    pub lambda: f64,
    pub k: usize,
    pub grid: ObsGrid,
    pub collapsed: bool,
}

impl ValueTable {
    pub fn canonical(&self, key: &[(u16, u16)]) -> NodeKey {
        canonical(key, self.collapsed)
    }

    pub fn get(&self, key: &[(u16, u16)]) -> Option<&TableEntry> {
        self.entries.get(&self.canonical(key))
    }

    /// Quantized key of a real-valued history.
    pub fn key_of(&self, h: &History) -> Option<NodeKey> {
        history_key(h, &self.grid)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn canonical(key: &[(u16, u16)], collapsed: bool) -> NodeKey {
    let mut k = key.to_vec();
    if collapsed {
        k.sort_unstable();
    }
    k
}

/// Quantize every scalar observation of `h` to its grid cell.
pub fn history_key(h: &History, grid: &ObsGrid) -> Option<NodeKey> {
    h.steps
        .iter()
        .map(|(a, x)| match a {
            Action::Query(a) => grid.locate(x.value()).map(|c| (*a as u16, c as u16)),
            Action::Stop => None,
        })
        .collect()
}

/// Finite prior with precomputed cell probabilities `cp[m][a][c]`.
#[derive(Clone, Debug)]
pub struct ExactProblem {
    pub prior: Vec<f64>,
    pub hyp_of: Vec<Hypothesis>,
    pub n_hyp: usize,
    pub k: usize,
    pub grid: ObsGrid,
    pub cp: Vec<Vec<Vec<f64>>>,
    /// Permutation-invariant keys are sound for i.i.d. scalar families.
    pub collapse: bool,
    pub node_limit: usize,
}

impl ExactProblem {
    pub fn new(spec: &PriorSpec, grid: &ObsGrid) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::EmptyGrid);
        }
        let models = spec.models().ok_or_else(|| Error::InvalidConfig("exact solvers need a finite prior".into()))?;
        let k = spec.k();
        let mut cp = Vec::with_capacity(models.len());
        for m in models {
            let mut per_arm = Vec::with_capacity(k);
            for a in 0..k {
                let law = m
                    .model
                    .scalar_law(a)
                    .ok_or_else(|| Error::InvalidConfig("exact solvers need scalar observations".into()))?;
                per_arm.push(grid.cell_probs(law));
            }
            cp.push(per_arm);
        }
        Ok(Self {
            prior: models.iter().map(|m| m.weight).collect(),
            hyp_of: models.iter().map(|m| m.model.h_star).collect(),
            n_hyp: spec.n_hypotheses(),
            k,
            grid: grid.clone(),
            cp,
            collapse: false,
            node_limit: NODE_LIMIT,
        })
    }

    /// Enable the per-arm multiset collapser (only valid for i.i.d. rewards).
    pub fn collapsed(mut self, on: bool) -> Self {
        self.collapse = on;
        self
    }

    pub fn with_node_limit(mut self, limit: usize) -> Self {
        self.node_limit = limit;
        self
    }

    /// Model posterior after a key.
    pub fn posterior_of(&self, key: &[(u16, u16)]) -> Vec<f64> {
        let mut w = self.prior.clone();
        for &(a, c) in key {
            for (m, wm) in w.iter_mut().enumerate() {
                *wm *= self.cp[m][a as usize][c as usize];
            }
            let s: f64 = w.iter().sum();
            if s > 0.0 {
                w.iter_mut().for_each(|x| *x /= s);
            }
        }
        w
    }

    pub fn hyp_probs(&self, post: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.n_hyp];
        for (m, w) in post.iter().enumerate() {
            p[self.hyp_of[m]] += w;
        }
        p
    }

    /// Predictive cell probabilities of arm `a` under model posterior `post`.
    pub fn predictive(&self, post: &[f64], a: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        for (m, w) in post.iter().enumerate() {
            if *w > 0.0 {
                for (c, o) in out.iter_mut().enumerate() {
                    *o += w * self.cp[m][a][c];
                }
            }
        }
        out
    }

    fn child(&self, post: &[f64], a: usize, c: usize, p_c: f64) -> Vec<f64> {
        post.iter().enumerate().map(|(m, w)| w * self.cp[m][a][c] / p_c).collect()
    }
}

#[derive(Clone, Copy)]
struct NodeValue {
    v: f64,
    corr: f64,
    tau: f64,
}

struct Solver<'a> {
    p: &'a ExactProblem,
    horizon: usize,
    /// `None` for fixed budget; `Some(lambda)` for fixed confidence.
    lambda: Option<f64>,
    entries: HashMap<NodeKey, TableEntry>,
    stats: HashMap<NodeKey, NodeValue>,
}

impl Solver<'_> {
    fn solve(&mut self, key: &mut NodeKey, post: &[f64]) -> Result<NodeValue> {
        let ck = canonical(key, self.p.collapse);
        if let Some(nv) = self.stats.get(&ck) {
            return Ok(*nv);
        }
        if self.entries.len() >= self.p.node_limit {
            return Err(Error::StateSpaceTooLarge { limit: self.p.node_limit });
        }
        let (map, r) = argmax_prob(&self.p.hyp_probs(post));
        let depth = key.len();
        let k = self.p.k;
        let (entry, nv) = if depth == self.horizon {
            let v = self.lambda.map_or(r, |l| l * r);
            let q = if self.lambda.is_some() { vec![f64::NEG_INFINITY; k].into_iter().chain([v]).collect() } else { vec![] };
            (TableEntry { v, q, r, map, best: Action::Stop }, NodeValue { v, corr: r, tau: 0.0 })
        } else {
            let mut q = Vec::with_capacity(k + 1);
            let mut per_action = Vec::with_capacity(k);
            for a in 0..k {
                let pred = self.p.predictive(post, a);
                let (mut ev, mut ec, mut et) = (0.0, 0.0, 0.0);
                for (c, &p_c) in pred.iter().enumerate() {
                    if p_c <= 0.0 {
                        continue;
                    }
                    let child = self.p.child(post, a, c, p_c);
                    key.push((a as u16, c as u16));
                    let cv = self.solve(key, &child);
                    key.pop();
                    let cv = cv?;
                    ev += p_c * cv.v;
                    ec += p_c * cv.corr;
                    et += p_c * cv.tau;
                }
                let qa = if self.lambda.is_some() { ev - 1.0 } else { ev };
                q.push(qa);
                per_action.push((ec, et));
            }
            let mut best = 0;
            for a in 1..k {
                if q[a] > q[best] {
                    best = a;
                }
            }
            match self.lambda {
                Some(l) => {
                    let stop = l * r;
                    q.push(stop);
                    if stop >= q[best] {
                        (TableEntry { v: stop, q, r, map, best: Action::Stop }, NodeValue { v: stop, corr: r, tau: 0.0 })
                    } else {
                        let v = q[best];
                        let (ec, et) = per_action[best];
                        (TableEntry { v, q, r, map, best: Action::Query(best) }, NodeValue { v, corr: ec, tau: 1.0 + et })
                    }
                }
                None => {
                    let v = q[best];
                    let (ec, et) = per_action[best];
                    (TableEntry { v, q, r, map, best: Action::Query(best) }, NodeValue { v, corr: ec, tau: 1.0 + et })
                }
            }
        };
        self.entries.insert(ck.clone(), entry);
        self.stats.insert(ck, nv);
        Ok(nv)
    }
}

fn run(p: &ExactProblem, horizon: usize, lambda: Option<f64>) -> Result<(ValueTable, NodeValue)> {
    let mut s = Solver { p, horizon, lambda, entries: HashMap::new(), stats: HashMap::new() };
    let root = s.solve(&mut Vec::new(), &p.prior)?;
    let mode = match lambda {
        None => EpisodeMode::FixedBudget { n: horizon.max(1) },
        Some(_) => EpisodeMode::FixedConfidence { delta: 0.5, n_max: horizon.max(1) },
    };
    let table = ValueTable {
        entries: s.entries,
        horizon,
        mode,
        lambda: lambda.unwrap_or(0.0),
        k: p.k,
        grid: p.grid.clone(),
        collapsed: p.collapse,
    };
    Ok((table, root))
}

/// Whether the exchangeability collapser is sound for a family.
pub fn collapse_is_sound(spec: &PriorSpec) -> bool {
    !matches!(spec.family, Family::FeedbackGraph { .. } | Family::MagicRoom { .. })
}

/// Fixed-budget optimum over `n` queries. Returns the table and `E[max posterior]`.
pub fn solve_fixed_budget(spec: &PriorSpec, n: usize, grid: &ObsGrid) -> Result<(ValueTable, f64)> {
    solve_fixed_budget_with(&ExactProblem::new(spec, grid)?, n)
}

pub fn solve_fixed_budget_with(p: &ExactProblem, n: usize) -> Result<(ValueTable, f64)> {
    let (t, root) = run(p, n, None)?;
    Ok((t, root.v))
}

#[derive(Clone, Debug)]
pub struct FixedConfidenceSolution {
    pub table: ValueTable,
    pub policy_value: f64,
    pub achieved_correctness: f64,
    /// Expected number of queries before stopping.
    pub expected_tau: f64,
}

/// Fixed-confidence optimum for stop bonus `lambda` and query cap `n_max`.
pub fn solve_fixed_confidence(
    spec: &PriorSpec,
    lambda: f64,
    n_max: usize,
    delta: f64,
    grid: &ObsGrid,
) -> Result<FixedConfidenceSolution> {
    solve_fixed_confidence_with(&ExactProblem::new(spec, grid)?, lambda, n_max, delta)
}

pub fn solve_fixed_confidence_with(p: &ExactProblem, lambda: f64, n_max: usize, delta: f64) -> Result<FixedConfidenceSolution> {
    if !(lambda >= 0.0) {
        return Err(Error::DomainError(format!("lambda must be >= 0, got {lambda}")));
    }
    let (mut table, root) = run(p, n_max, Some(lambda))?;
    table.mode = EpisodeMode::FixedConfidence { delta, n_max: n_max.max(1) };
    Ok(FixedConfidenceSolution { table, policy_value: root.v, achieved_correctness: root.corr, expected_tau: root.tau })
}

#[derive(Clone, Debug)]
pub struct DualResult {
    pub lambda_star: f64,
    pub solution: FixedConfidenceSolution,
    /// Every `(lambda, achieved correctness)` pair evaluated.
    pub trace: Vec<(f64, f64)>,
}

/// Smallest stop bonus whose optimal policy is `(1 - delta)`-correct, by bisection.
pub fn dual_search(spec: &PriorSpec, delta: f64, n_max: usize, grid: &ObsGrid) -> Result<DualResult> {
    let p = ExactProblem::new(spec, grid)?.collapsed(collapse_is_sound(spec));
    dual_search_with(&p, delta, n_max)
}

pub fn dual_search_with(p: &ExactProblem, delta: f64, n_max: usize) -> Result<DualResult> {
    const TOL: f64 = 1e-3;
    const LAMBDA_MAX: f64 = 1e6;
    let target = 1.0 - delta;
    let ok = |s: &FixedConfidenceSolution| s.achieved_correctness >= target - 1e-12;
    let mut trace = Vec::new();
    let eval = |l: f64, trace: &mut Vec<(f64, f64)>| -> Result<FixedConfidenceSolution> {
        let s = solve_fixed_confidence_with(p, l, n_max, delta)?;
        trace.push((l, s.achieved_correctness));
        Ok(s)
    };
    let s0 = eval(0.0, &mut trace)?;
    if ok(&s0) {
        return Ok(DualResult { lambda_star: 0.0, solution: s0, trace });
    }
    let mut hi = 4.0 * n_max as f64;
    let mut s_hi = eval(hi, &mut trace)?;
    while !ok(&s_hi) {
        if hi >= LAMBDA_MAX {
            return Err(Error::InfeasibleAtHorizon { target, best: s_hi.achieved_correctness });
        }
        hi = (hi * 2.0).min(LAMBDA_MAX);
        s_hi = eval(hi, &mut trace)?;
    }
    let mut lo = 0.0;
    while hi - lo > TOL {
        let mid = 0.5 * (lo + hi);
        let s = eval(mid, &mut trace)?;
        if ok(&s) {
            hi = mid;
            s_hi = s;
        } else {
            lo = mid;
        }
    }
    Ok(DualResult { lambda_star: hi, solution: s_hi, trace })
}

/// Greedy policy read from a value table; recommends the quantized-posterior argmax.
#[derive(Clone, Debug)]
pub struct TablePolicy<'a> {
    pub table: &'a ValueTable,
}

impl Policy for TablePolicy<'_> {
    fn act(&mut self, h: &History, _rng: &mut RandomSource) -> Result<Action> {
        let key = self.table.key_of(h).ok_or(Error::InvalidConfig("observation outside grid alphabet".into()))?;
        let e = self.table.get(&key).ok_or(Error::InvalidConfig("history not in value table".into()))?;
        Ok(e.best)
    }

    fn recommend(&mut self, h: &History) -> Hypothesis {
        self.table.key_of(h).and_then(|k| self.table.get(&k).map(|e| e.map)).unwrap_or(0)
    }
}

// Binary cache

const TABLE_MAGIC: &[u8; 8] = b"ICPEVT01";

#[derive(Serialize, Deserialize)]
struct TableHeader {
    horizon: usize,
    mode: EpisodeMode,
    lambda: f64,
    k: usize,
    grid: ObsGrid,
    collapsed: bool,
    entries: usize,
}

/// Cache file name derived from the prior, horizon, stop bonus and grid.
pub fn cache_path(dir: &Path, spec: &PriorSpec, horizon: usize, lambda: f64, grid: &ObsGrid) -> Result<PathBuf> {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(spec)?);
    hasher.update(horizon.to_le_bytes());
    hasher.update(lambda.to_le_bytes());
    hasher.update(serde_json::to_vec(grid)?);
    let digest = hasher.finalize();
    let hex: String = digest.iter().take(12).map(|b| format!("{b:02x}")).collect();
    Ok(dir.join(format!("table-{hex}.bin")))
}

pub fn save_table(t: &ValueTable, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(TABLE_MAGIC)?;
    let header = TableHeader {
        horizon: t.horizon,
        mode: t.mode,
        lambda: t.lambda,
        k: t.k,
        grid: t.grid.clone(),
        collapsed: t.collapsed,
        entries: t.entries.len(),
    };
    let hb = serde_json::to_vec(&header)?;
    w.write_u32::<LittleEndian>(hb.len() as u32)?;
    w.write_all(&hb)?;
    let mut keys: Vec<&NodeKey> = t.entries.keys().collect();
    keys.sort();
    for key in keys {
        let e = &t.entries[key];
        w.write_u16::<LittleEndian>(key.len() as u16)?;
        for &(a, c) in key {
            w.write_u16::<LittleEndian>(a)?;
            w.write_u16::<LittleEndian>(c)?;
        }
        w.write_f64::<LittleEndian>(e.v)?;
        w.write_f64::<LittleEndian>(e.r)?;
        w.write_u32::<LittleEndian>(e.map as u32)?;
        w.write_u32::<LittleEndian>(e.best.index(t.k) as u32)?;
        w.write_u16::<LittleEndian>(e.q.len() as u16)?;
        for &q in &e.q {
            w.write_f64::<LittleEndian>(q)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_table(path: &Path) -> Result<ValueTable> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != TABLE_MAGIC {
        return Err(Error::CheckpointFormat("not a value-table file".into()));
    }
    let hl = r.read_u32::<LittleEndian>()? as usize;
    let mut hb = vec![0u8; hl];
    r.read_exact(&mut hb)?;
    let h: TableHeader = serde_json::from_slice(&hb)?;
    let mut entries = HashMap::with_capacity(h.entries);
    for _ in 0..h.entries {
        let n = r.read_u16::<LittleEndian>()? as usize;
        let mut key = Vec::with_capacity(n);
        for _ in 0..n {
            key.push((r.read_u16::<LittleEndian>()?, r.read_u16::<LittleEndian>()?));
        }
        let v = r.read_f64::<LittleEndian>()?;
        let rr = r.read_f64::<LittleEndian>()?;
        let map = r.read_u32::<LittleEndian>()? as usize;
        let best = Action::from_index(r.read_u32::<LittleEndian>()? as usize, h.k);
        let nq = r.read_u16::<LittleEndian>()? as usize;
        let q = (0..nq).map(|_| r.read_f64::<LittleEndian>()).collect::<std::io::Result<Vec<_>>>()?;
        entries.insert(key, TableEntry { v, q, r: rr, map, best });
    }
    Ok(ValueTable { entries, horizon: h.horizon, mode: h.mode, lambda: h.lambda, k: h.k, grid: h.grid, collapsed: h.collapsed })
}
