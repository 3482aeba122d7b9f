//! Config-driven experiment runner: algorithm registry, paired random streams,
//! hashed CSV/JSON outputs and report tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{ApproxTasForm, ApproxTasPolicy, EtcPolicy, GaussianPlugIn, IdptPolicy, IidsPolicy, TasPolicy, TtpsPolicy, UcbPolicy};
use crate::core::{rollout, EpisodeMode, History, Policy, UniformPolicy};
use crate::envs::{sample_env, EnvModel, Family, PriorSpec, ScalarLaw};
use crate::error::{Error, Result};
use crate::learner::{load_checkpoint, LearnerState};
use crate::posterior::{ExactPosterior, ObsGrid, PosteriorModel};
use crate::rng::RandomSource;
use crate::stats::{hierarchical_bootstrap, survival_curve, BootstrapCi, EnvRecord, Metric, NestedResults, SeedRecord, TrajectoryRecord};

/// Registered algorithm ids.
pub const ALGORITHMS: &[&str] = &["uniform", "tas", "ttps", "approx_tas", "ucb", "icpe", "idpt", "iids", "etc"];

/// Environment prior, either a named finite prior or a continuous family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorConfig {
    Continuous { family: Family },
    BinarySearch { k: usize },
    TwoModelDet,
    DeterministicModels { means: Vec<Vec<f64>> },
    GaussianModels { means: Vec<Vec<f64>>, sigma: f64 },
}

impl PriorConfig {
    pub fn build(&self) -> Result<PriorSpec> {
        match self {
            PriorConfig::Continuous { family } => Ok(PriorSpec::continuous(family.clone())),
            PriorConfig::BinarySearch { k } => Ok(PriorSpec::binary_search(*k)),
            PriorConfig::TwoModelDet => Ok(PriorSpec::two_model_det()),
            PriorConfig::DeterministicModels { means } => PriorSpec::deterministic_models(means),
            PriorConfig::GaussianModels { means, sigma } => PriorSpec::gaussian_models(means, *sigma),
        }
    }

    /// Short command-line names: `two-model-det`, `binary-search`, `deterministic`,
    /// `gaussian-min-gap`, `magic-action`.
    pub fn from_name(name: &str, k: usize) -> Result<Self> {
        Ok(match name {
            "two-model-det" => PriorConfig::TwoModelDet,
            "binary-search" => PriorConfig::BinarySearch { k },
            "deterministic" => PriorConfig::Continuous { family: Family::Deterministic { k } },
            "gaussian-min-gap" => PriorConfig::Continuous { family: Family::gaussian_min_gap(k) },
            "magic-action" => PriorConfig::Continuous { family: Family::magic_action(k, 0.0) },
            _ => return Err(Error::InvalidConfig(format!("unknown prior `{name}`"))),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlgorithmConfig {
    pub id: String,
    /// Trained learner for `icpe`, `etc`, and optionally `idpt` / `iids`.
    pub checkpoint: Option<PathBuf>,
    /// Confidence level; defaults to the fixed-confidence mode's delta.
    pub delta: Option<f64>,
    /// Reward noise assumed by Gaussian baselines; defaults to the family's.
    pub sigma: Option<f64>,
    pub form: ApproxTasForm,
}

impl AlgorithmConfig {
    pub fn named(id: &str) -> Self {
        Self { id: id.into(), ..Default::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub seeds: usize,
    pub envs_per_seed: usize,
    pub trajectories_per_env: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub prior: PriorConfig,
    pub algorithm: AlgorithmConfig,
    pub mode: EpisodeMode,
    pub counts: Counts,
    pub master_seed: u64,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self.counts;
        if c.seeds == 0 || c.envs_per_seed == 0 || c.trajectories_per_env == 0 {
            return Err(Error::InvalidConfig("counts must all be >= 1".into()));
        }
        if !ALGORITHMS.contains(&self.algorithm.id.as_str()) {
            return Err(Error::UnknownAlgorithm(self.algorithm.id.clone()));
        }
        self.mode.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Toml(e.to_string()))
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Toml(e.to_string()))
    }

    /// Reads `.json` files as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Ok(serde_json::from_str(&s)?)
        } else {
            Self::from_toml(&s)
        }
    }

    /// Content hash of the whole config.
    pub fn hash(&self) -> String {
        content_hash("config", &serde_json::to_vec(self).expect("config serializes"))
    }

    /// Hash of everything that defines the environments and streams, so runs of
    /// different algorithms on the same draws share it.
    pub fn paired_hash(&self) -> String {
        let key = (&self.prior, &self.mode, &self.counts, self.master_seed);
        content_hash("pairing", &serde_json::to_vec(&key).expect("config serializes"))
    }
}

/// Git-style object hash: sha256 over `"{kind} {len}\0"` followed by the bytes.
pub fn content_hash(kind: &str, bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("{kind} {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Observation grid suited to a finite prior: its point alphabet when every
/// law is a point mass, else `cells` equal cells spanning the means +- 3 sd.
pub fn natural_grid(spec: &PriorSpec, cells: usize) -> Result<ObsGrid> {
    let models = spec.models().ok_or_else(|| Error::InvalidConfig("a grid needs a finite prior".into()))?;
    let laws: Vec<ScalarLaw> = models
        .iter()
        .flat_map(|m| (0..spec.k()).map(move |a| m.model.scalar_law(a)))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::InvalidConfig("exact solvers need scalar observations".into()))?;
    let mut points: Vec<f64> = Vec::new();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut all_points = true;
    for l in laws {
        match l {
            ScalarLaw::Point(v) => {
                points.push(v);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            ScalarLaw::Gaussian { mean, sd } => {
                all_points = false;
                lo = lo.min(mean - 3.0 * sd);
                hi = hi.max(mean + 3.0 * sd);
            }
        }
    }
    if all_points {
        points.sort_by(|a, b| a.partial_cmp(b).unwrap());
        points.dedup();
        Ok(ObsGrid::Points(points))
    } else {
        Ok(ObsGrid::cells(lo, hi, cells))
    }
}

fn family_sigma(f: &Family) -> f64 {
    match *f {
        Family::GaussianMinGap { sigma, .. }
        | Family::MagicAction { sigma, .. }
        | Family::MagicChain { sigma, .. }
        | Family::FeedbackGraph { sigma, .. } => sigma,
        _ => 1.0,
    }
}

/// Outcome of one trajectory.
struct Outcome {
    correct: bool,
    tau: usize,
    pulls: Vec<usize>,
}

fn outcome(h: &History, h_star: usize, rec: usize, k: usize) -> Outcome {
    let mut pulls = vec![0; k];
    for a in h.actions() {
        pulls[a] += 1;
    }
    Outcome { correct: rec == h_star, tau: h.n_queries(), pulls }
}

/// Environment and trajectory streams are keyed by ids, so every algorithm sees
/// the same environment draws and the same per-trajectory stream.
pub fn env_stream(master: u64, seed: usize, env: usize) -> RandomSource {
    RandomSource::derived(master, &[seed as u64, env as u64])
}

pub fn trajectory_stream(master: u64, seed: usize, env: usize, traj: usize) -> RandomSource {
    RandomSource::derived(master, &[seed as u64, env as u64, traj as u64, 1])
}

fn make_policy<'a>(
    cfg: &ExperimentConfig,
    spec: &PriorSpec,
    learner: Option<&'a LearnerState<f32>>,
) -> Result<Box<dyn Policy + Send + 'a>> {
    let k = spec.k();
    let a = &cfg.algorithm;
    let sigma = a.sigma.unwrap_or_else(|| family_sigma(&spec.family));
    let mode_delta = match cfg.mode {
        EpisodeMode::FixedConfidence { delta, .. } => Some(delta),
        EpisodeMode::FixedBudget { .. } => None,
    };
    let delta = a.delta.or(mode_delta);
    let need_delta = || delta.ok_or_else(|| Error::InvalidConfig(format!("`{}` needs a delta", a.id)));
    let infer = || -> Result<Box<dyn PosteriorModel + Send + Sync + 'a>> {
        match learner {
            Some(l) => Ok(Box::new(&l.infer)),
            None if spec.models().is_some() => Ok(Box::new(ExactPosterior { spec: spec.clone() })),
            None => Err(Error::CheckpointMissing(format!("`{}` on a continuous prior needs a checkpoint", a.id))),
        }
    };
    Ok(match a.id.as_str() {
        "uniform" => Box::new(UniformPolicy { k }),
        "tas" => Box::new(TasPolicy::new(k, sigma, need_delta()?)),
        "ttps" => Box::new(TtpsPolicy::new(k, sigma, need_delta()?)),
        "approx_tas" => Box::new(ApproxTasPolicy::new(k, sigma, need_delta()?, a.form)),
        "ucb" => Box::new(UcbPolicy { k, sigma }),
        "idpt" => Box::new(IdptPolicy { infer: infer()?, k, delta: need_delta()? }),
        "iids" => Box::new(IidsPolicy { infer: infer()?, predictive: GaussianPlugIn { k, sigma, grid: 30 }, k, delta }),
        "etc" => {
            let l = learner.ok_or_else(|| Error::CheckpointMissing("`etc` needs a checkpoint".into()))?;
            Box::new(EtcPolicy::new(&l.q, &l.infer, k))
        }
        other => return Err(Error::UnknownAlgorithm(other.into())),
    })
}

fn load_learner(cfg: &ExperimentConfig) -> Result<Option<LearnerState<f32>>> {
    if cfg.algorithm.id == "icpe" || cfg.algorithm.id == "etc" {
        let p = cfg.algorithm.checkpoint.as_ref().ok_or_else(|| Error::CheckpointMissing(format!("`{}` needs a checkpoint", cfg.algorithm.id)))?;
        return Ok(Some(load_checkpoint(p)?));
    }
    match &cfg.algorithm.checkpoint {
        Some(p) => Ok(Some(load_checkpoint(p)?)),
        None => Ok(None),
    }
}

/// Roll out the configured algorithm for every (seed, env, trajectory).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<NestedResults> {
    cfg.validate()?;
    let spec = cfg.prior.build()?;
    let learner = load_learner(cfg)?;
    run_with(cfg, &spec, learner.as_ref())
}

/// [`run_experiment`] with an already loaded learner.
pub fn run_with(cfg: &ExperimentConfig, spec: &PriorSpec, learner: Option<&LearnerState<f32>>) -> Result<NestedResults> {
    cfg.validate()?;
    if let Some(l) = learner {
        if l.spec.k() != spec.k() || l.spec.n_hypotheses() != spec.n_hypotheses() {
            return Err(Error::InvalidConfig("checkpoint was trained on a different action or hypothesis count".into()));
        }
        if cfg.mode.horizon() + 1 > l.q.model.cfg.max_len {
            return Err(Error::InvalidConfig(format!("horizon {} exceeds the checkpoint's context", cfg.mode.horizon())));
        }
    }
    let c = cfg.counts;
    let k = spec.k();
    let cells: Vec<(usize, usize)> = (0..c.seeds).flat_map(|s| (0..c.envs_per_seed).map(move |e| (s, e))).collect();
    let per_cell: Vec<Result<Vec<Outcome>>> = if cfg.algorithm.id == "icpe" {
        let l = learner.expect("icpe has a learner");
        cells.iter().map(|&(s, e)| icpe_cell(cfg, spec, l, s, e)).collect()
    } else {
        cells
            .par_iter()
            .map(|&(s, e)| {
                let env = sample_env(spec, &mut env_stream(cfg.master_seed, s, e))?;
                let mut policy = make_policy(cfg, spec, learner)?;
                (0..c.trajectories_per_env)
                    .map(|j| {
                        let mut rng = trajectory_stream(cfg.master_seed, s, e, j);
                        let r = rollout(&env, policy.as_mut(), cfg.mode, &mut rng)?;
                        let rec = policy.recommend(&r.history);
                        Ok(outcome(&r.history, r.h_star, rec, k))
                    })
                    .collect()
            })
            .collect()
    };
    let mut seeds: Vec<SeedRecord> = (0..c.seeds).map(|s| SeedRecord { id: s as u64, envs: Vec::new() }).collect();
    for (&(s, e), outs) in cells.iter().zip(per_cell) {
        let trajectories = outs?
            .into_iter()
            .enumerate()
            .map(|(j, o)| {
                let mut extra = BTreeMap::new();
                let distinct = o.pulls.iter().filter(|&&n| n > 0).count();
                extra.insert("unique_frac".to_string(), if o.tau == 0 { 0.0 } else { distinct as f64 / o.tau as f64 });
                for (a, n) in o.pulls.iter().enumerate() {
                    extra.insert(format!("pulls_{a}"), *n as f64);
                }
                TrajectoryRecord { id: j as u64, correct: o.correct, tau: o.tau, extra }
            })
            .collect();
        seeds[s].envs.push(EnvRecord { id: e as u64, trajectories });
    }
    Ok(NestedResults { seeds })
}

/// Batched greedy rollouts of a trained learner over one environment.
fn icpe_cell(cfg: &ExperimentConfig, spec: &PriorSpec, l: &LearnerState<f32>, s: usize, e: usize) -> Result<Vec<Outcome>> {
    let env = sample_env(spec, &mut env_stream(cfg.master_seed, s, e))?;
    let n = cfg.counts.trajectories_per_env;
    let envs: Vec<EnvModel> = vec![env; n];
    let mut rngs: Vec<RandomSource> = (0..n).map(|j| trajectory_stream(cfg.master_seed, s, e, j)).collect();
    let eps = crate::learner::rollout_batch(&l.q, Some(&l.infer), &envs, &mut rngs, cfg.mode, 0.0)?;
    Ok(eps.iter().map(|ep| outcome(&ep.history, ep.h_star, ep.recommended.unwrap_or(0), spec.k())).collect())
}

// Output files

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub paired_hash: String,
    pub files: Vec<String>,
    pub n_trajectories: usize,
    pub seconds: f64,
}

#[derive(Serialize, Deserialize)]
struct StoredResults {
    config_hash: String,
    results: NestedResults,
}

/// Run and write `manifest.json`, `results.json` and one CSV per metric.
pub fn run_and_write(cfg: &ExperimentConfig) -> Result<(NestedResults, Manifest)> {
    let t0 = Instant::now();
    let res = run_experiment(cfg)?;
    let m = write_outputs(cfg, &res, t0.elapsed().as_secs_f64())?;
    Ok((res, m))
}

pub fn write_outputs(cfg: &ExperimentConfig, res: &NestedResults, seconds: f64) -> Result<Manifest> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    let hash = cfg.hash();
    let k = res.all_trajectories().next().map(|t| t.extra.keys().filter(|k| k.starts_with("pulls_")).count()).unwrap_or(0);
    let mut files = Vec::new();
    for (name, metric) in [("correct", Metric::Correct), ("tau", Metric::Tau), ("unique_frac", Metric::Extra("unique_frac".into()))] {
        let file = format!("{name}.csv");
        let mut w = csv::Writer::from_path(dir.join(&file))?;
        w.write_record(["config_hash", "seed", "env", "trajectory", name])?;
        for s in &res.seeds {
            for e in &s.envs {
                for t in &e.trajectories {
                    w.write_record([hash.clone(), s.id.to_string(), e.id.to_string(), t.id.to_string(), metric.eval(t).to_string()])?;
                }
            }
        }
        w.flush()?;
        files.push(file);
    }
    let mut w = csv::Writer::from_path(dir.join("pulls.csv"))?;
    let mut header = vec!["config_hash".to_string(), "seed".into(), "env".into(), "trajectory".into()];
    header.extend((0..k).map(|a| format!("arm_{a}")));
    w.write_record(&header)?;
    for s in &res.seeds {
        for e in &s.envs {
            for t in &e.trajectories {
                let mut row = vec![hash.clone(), s.id.to_string(), e.id.to_string(), t.id.to_string()];
                row.extend((0..k).map(|a| t.extra[&format!("pulls_{a}")].to_string()));
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;
    files.push("pulls.csv".into());
    fs::write(dir.join("results.json"), serde_json::to_vec(&StoredResults { config_hash: hash.clone(), results: res.clone() })?)?;
    files.push("results.json".into());
    let m = Manifest {
        config: cfg.clone(),
        config_hash: hash,
        paired_hash: cfg.paired_hash(),
        files,
        n_trajectories: res.n_trajectories(),
        seconds,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&m)?)?;
    Ok(m)
}

/// A finished run loaded from disk after checking that every file carries the
/// manifest's hash.
#[derive(Clone, Debug)]
pub struct Run {
    pub manifest: Manifest,
    pub results: NestedResults,
}

pub fn load_run(dir: &Path) -> Result<Run> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let want = manifest.config.hash();
    if manifest.config_hash != want {
        return Err(Error::HashMismatch(manifest.config_hash.clone(), want));
    }
    let stored: StoredResults = serde_json::from_slice(&fs::read(dir.join("results.json"))?)?;
    if stored.config_hash != want {
        return Err(Error::HashMismatch(stored.config_hash, want));
    }
    for f in manifest.files.iter().filter(|f| f.ends_with(".csv")) {
        let mut r = csv::Reader::from_path(dir.join(f))?;
        for rec in r.records() {
            let rec = rec?;
            if rec.get(0) != Some(want.as_str()) {
                return Err(Error::HashMismatch(rec.get(0).unwrap_or("").to_string(), want));
            }
        }
    }
    Ok(Run { manifest, results: stored.results })
}

/// Runs compared side by side must share environments and streams.
pub fn check_paired(runs: &[Run]) -> Result<()> {
    if let Some(first) = runs.first() {
        for r in &runs[1..] {
            if r.manifest.paired_hash != first.manifest.paired_hash {
                return Err(Error::HashMismatch(first.manifest.paired_hash.clone(), r.manifest.paired_hash.clone()));
            }
        }
    }
    Ok(())
}

// Reports

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub algorithm: String,
    pub k: usize,
    pub correct: BootstrapCi,
    pub tau: BootstrapCi,
}

/// Bootstrapped correctness and stopping time per run (stopping-time vs K and
/// correctness bars).
pub fn summary_table(runs: &[Run], reps: usize, seed: u64) -> Result<Vec<SummaryRow>> {
    runs.iter()
        .map(|r| {
            let mut g = RandomSource::new(seed);
            Ok(SummaryRow {
                name: r.manifest.config.name.clone(),
                algorithm: r.manifest.config.algorithm.id.clone(),
                k: r.manifest.config.prior.build()?.k(),
                correct: hierarchical_bootstrap(&r.results, &Metric::Correct, reps, &mut g)?,
                tau: hierarchical_bootstrap(&r.results, &Metric::Tau, reps, &mut g)?,
            })
        })
        .collect()
}

/// `P(tau > t)` on `0..=t_max` per run, columns in run order.
pub fn survival_table(runs: &[Run]) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    check_paired(runs)?;
    let taus: Vec<Vec<usize>> = runs.iter().map(|r| r.results.all_trajectories().map(|t| t.tau).collect()).collect();
    let t_max = taus.iter().flatten().copied().max().unwrap_or(0);
    let grid: Vec<usize> = (0..=t_max).collect();
    let curves = taus.iter().map(|t| survival_curve(t, &grid)).collect::<Result<Vec<_>>>()?;
    Ok((grid, curves))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinarySearchRow {
    pub k: usize,
    /// Smallest per-seed accuracy.
    pub min_accuracy: f64,
    pub mean_stop: f64,
    /// Standard deviation of the per-seed mean stopping times.
    pub stop_sd: f64,
    pub max_stop: usize,
    pub log2_k: f64,
}

pub fn binary_search_row(k: usize, res: &NestedResults) -> BinarySearchRow {
    let per_seed = |f: &dyn Fn(&TrajectoryRecord) -> f64| -> Vec<f64> {
        res.seeds
            .iter()
            .map(|s| {
                let v: Vec<f64> = s.envs.iter().flat_map(|e| &e.trajectories).map(f).collect();
                v.iter().sum::<f64>() / v.len() as f64
            })
            .collect()
    };
    let acc = per_seed(&|t| t.correct as u8 as f64);
    let stops = per_seed(&|t| t.tau as f64);
    let all: Vec<f64> = res.all_trajectories().map(|t| t.tau as f64).collect();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let m_s = stops.iter().sum::<f64>() / stops.len() as f64;
    let sd = if stops.len() > 1 { (stops.iter().map(|x| (x - m_s).powi(2)).sum::<f64>() / (stops.len() - 1) as f64).sqrt() } else { 0.0 };
    BinarySearchRow {
        k,
        min_accuracy: acc.iter().cloned().fold(f64::INFINITY, f64::min),
        mean_stop: mean,
        stop_sd: sd,
        max_stop: res.all_trajectories().map(|t| t.tau).max().unwrap_or(0),
        log2_k: (k as f64).log2(),
    }
}

/// Evaluate binary-search checkpoints on fresh targets, one table row each.
pub fn binary_search_table(ckpts: &[PathBuf], counts: Counts, master_seed: u64) -> Result<Vec<BinarySearchRow>> {
    ckpts
        .iter()
        .map(|p| {
            let l: LearnerState<f32> = load_checkpoint(p)?;
            let k = match l.spec.family {
                Family::BinarySearch { k } => k,
                _ => return Err(Error::InvalidConfig(format!("{} is not a binary-search checkpoint", p.display()))),
            };
            let cfg = ExperimentConfig {
                name: format!("binary-search-{k}"),
                prior: PriorConfig::BinarySearch { k },
                algorithm: AlgorithmConfig { checkpoint: Some(p.clone()), ..AlgorithmConfig::named("icpe") },
                mode: l.cfg.mode,
                counts,
                master_seed,
                output_dir: PathBuf::new(),
            };
            let res = run_with(&cfg, &l.spec, Some(&l))?;
            Ok(binary_search_row(k, &res))
        })
        .collect()
}

/// Serialize rows with a header as CSV text.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("csv is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(id: &str) -> ExperimentConfig {
        ExperimentConfig {
            name: "t".into(),
            prior: PriorConfig::Continuous { family: Family::Deterministic { k: 4 } },
            algorithm: AlgorithmConfig::named(id),
            mode: EpisodeMode::FixedBudget { n: 4 },
            counts: Counts { seeds: 2, envs_per_seed: 10, trajectories_per_env: 5 },
            master_seed: 3,
            output_dir: PathBuf::from("unused"),
        }
    }

    #[test]
    fn uniform_counts() {
        let r = run_experiment(&cfg("uniform")).unwrap();
        assert_eq!(r.n_trajectories(), 100);
        assert!(r.all_trajectories().all(|t| t.tau == 4));
    }

    #[test]
    fn unknown_algorithm() {
        assert!(matches!(run_experiment(&cfg("nope")), Err(Error::UnknownAlgorithm(_))));
        let mut c = cfg("icpe");
        c.algorithm.checkpoint = Some("/does/not/exist".into());
        assert!(matches!(run_experiment(&c), Err(Error::CheckpointMissing(_))));
    }

    #[test]
    fn config_round_trips() {
        let mut c = cfg("approx_tas");
        c.mode = EpisodeMode::FixedConfidence { delta: 0.1, n_max: 50 };
        c.prior = PriorConfig::Continuous { family: Family::gaussian_min_gap(4) };
        c.algorithm.sigma = Some(0.5);
        let s = c.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&s).unwrap(), c);
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&serde_json::to_string(&c).unwrap()).unwrap(), c);
    }
}
