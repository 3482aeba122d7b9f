//! The meta-training loop, cost ascent, checkpoints and metric logs.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::cert::{seq_observe, SeqTestState};
use crate::core::EpisodeMode;
use crate::envs::{sample_env, PriorSpec};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, ModelConfig, SequenceModel};
use crate::rng::{RandomSource, RngState};
use crate::scalar::Scalar;

use super::loss::{inference_loss, q_loss_fixed_budget, q_loss_fixed_confidence, LossSeq, TargetOpts};
use super::{rollout_batch, Encoder, Episode, IcpePolicy, InferenceNet, QNet, ReplayBuffer};

/// Lower bound on the per-step cost.
pub const COST_FLOOR: f64 = 1e-4;

/// Projected step on the cost toward the correctness target `1 - delta`.
pub fn cost_update(c: f64, delta: f64, outcomes: &[bool], beta: f64) -> f64 {
    if outcomes.is_empty() {
        return c;
    }
    let p = outcomes.iter().filter(|&&o| o).count() as f64 / outcomes.len() as f64;
    (c - beta * ((1.0 - delta) - p)).max(COST_FLOOR)
}

/// How gradient batches are formed from sampled transitions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    /// Train only at the sampled transitions.
    Transitions,
    /// Train at every position of each episode a sampled transition belongs to.
    #[default]
    Episodes,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifyConfig {
    pub delta_prime: f64,
    pub eta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: EpisodeMode,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub grad_steps_per_epoch: usize,
    /// Transitions drawn per gradient step.
    pub batch_size: usize,
    pub batch_mode: BatchMode,
    pub buffer_capacity: usize,
    pub target_period_phi: usize,
    pub target_period_theta: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of the epochs over which epsilon is annealed.
    pub eps_anneal_frac: f64,
    pub gamma: f64,
    pub log_reward: bool,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub adam_phi: AdamConfig,
    pub adam_theta: AdamConfig,
    pub cost_init: f64,
    pub cost_beta: f64,
    /// Epochs before the cost starts adapting.
    pub cost_warmup_epochs: usize,
    pub eval_envs: usize,
    /// Evaluation period in fixed-budget mode (fixed confidence evaluates every epoch).
    pub eval_every: usize,
    pub certify: Option<CertifyConfig>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: EpisodeMode::FixedBudget { n: 4 },
            epochs: 200,
            episodes_per_epoch: 64,
            grad_steps_per_epoch: 4,
            batch_size: 64,
            batch_mode: BatchMode::Episodes,
            buffer_capacity: 100_000,
            target_period_phi: 50,
            target_period_theta: 50,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_anneal_frac: 0.5,
            gamma: 1.0,
            log_reward: false,
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            d_ff: 256,
            adam_phi: AdamConfig::default(),
            adam_theta: AdamConfig::default(),
            cost_init: 0.2,
            cost_beta: 0.01,
            cost_warmup_epochs: 0,
            eval_envs: 64,
            eval_every: 10,
            certify: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn arch(&self, max_len: usize) -> ModelConfig {
        ModelConfig {
            d_in: 0,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            max_len,
            d_out: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mode.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.epochs == 0 || self.episodes_per_epoch == 0 || self.batch_size == 0 || self.buffer_capacity == 0 {
            return bad("epochs, episodes_per_epoch, batch_size and buffer_capacity must be >= 1");
        }
        if self.target_period_phi == 0 || self.target_period_theta == 0 {
            return bad("target periods must be >= 1");
        }
        if !(self.cost_init > 0.0) || !(self.cost_beta > 0.0) {
            return bad("cost_init and cost_beta must be positive");
        }
        if !(0.0..=1.0).contains(&self.eps_start) || !(0.0..=1.0).contains(&self.eps_end) {
            return bad("epsilon must lie in [0, 1]");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if self.d_model % self.n_heads.max(1) != 0 {
            return bad("d_model must be divisible by n_heads");
        }
        Ok(())
    }
}

/// Linear anneal from `eps_start` to `eps_end`, then constant.
pub fn epsilon_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    let span = (cfg.eps_anneal_frac * cfg.epochs as f64).round() as usize;
    if span == 0 || epoch >= span {
        cfg.eps_end
    } else {
        cfg.eps_start + (cfg.eps_end - cfg.eps_start) * epoch as f64 / span as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub epsilon: f64,
    pub inference_loss: f64,
    pub q_loss: f64,
    pub grad_norm_phi: f64,
    pub grad_norm_theta: f64,
    pub p_hat: Option<f64>,
    pub eval_tau: Option<f64>,
    pub cost: f64,
    pub buffer_len: usize,
    pub certified: bool,
}

/// Networks, targets, optimizers and the adaptive cost.
#[derive(Clone, Debug)]
pub struct LearnerState<S> {
    pub cfg: TrainConfig,
    pub spec: PriorSpec,
    pub infer: InferenceNet<S>,
    pub q: QNet<S>,
    pub infer_target: InferenceNet<S>,
    pub q_target: QNet<S>,
    pub opt_phi: Adam<S>,
    pub opt_theta: Adam<S>,
    pub cost: f64,
    pub epoch: usize,
    pub grad_steps: u64,
    pub rng: RngState,
    pub cert: Option<SeqTestState>,
    pub frozen: bool,
}

impl<S: Scalar> LearnerState<S> {
    pub fn new(spec: PriorSpec, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let enc = Encoder { k: spec.k(), d_obs: spec.obs_dim() };
        let arch = cfg.arch(cfg.mode.horizon() + 1);
        let mut init = RandomSource::derived(cfg.seed, &[0]);
        let infer = InferenceNet::new(enc, spec.n_hypotheses(), &arch, &mut init);
        let q = QNet::new(enc, cfg.mode.allows_stop(), &arch, &mut init);
        let cert = cfg.certify.map(|c| SeqTestState::new(c.delta_prime, c.eta, cfg.eval_envs));
        Ok(Self {
            opt_phi: Adam::new(cfg.adam_phi.clone(), infer.model.n_params()),
            opt_theta: Adam::new(cfg.adam_theta.clone(), q.model.n_params()),
            infer_target: infer.clone(),
            q_target: q.clone(),
            infer,
            q,
            cost: cfg.cost_init,
            epoch: 0,
            grad_steps: 0,
            rng: RandomSource::derived(cfg.seed, &[3]).state(),
            cert,
            frozen: false,
            spec,
            cfg,
        })
    }

    pub fn policy(&self) -> IcpePolicy<'_, S> {
        IcpePolicy::new(&self.q, &self.infer)
    }

    /// Greedy rollouts with recommendations on the given environments.
    pub fn evaluate(&self, envs: &[crate::envs::EnvModel], rngs: &mut [RandomSource]) -> Result<Vec<Episode>> {
        let mut out = Vec::with_capacity(envs.len());
        for (e, r) in envs.chunks(256).zip(rngs.chunks_mut(256)) {
            out.extend(rollout_batch(&self.q, Some(&self.infer), e, r, self.cfg.mode, 0.0)?);
        }
        Ok(out)
    }

    /// Greedy evaluation on `n` fresh environments drawn from streams keyed by `ids`.
    pub fn evaluate_fresh(&self, n: usize, master: u64, ids: &[u64]) -> Result<Vec<Episode>> {
        let mut envs = Vec::with_capacity(n);
        let mut rngs = Vec::with_capacity(n);
        for i in 0..n {
            let mut key = ids.to_vec();
            key.push(i as u64);
            let mut r = RandomSource::derived(master, &key);
            envs.push(sample_env(&self.spec, &mut r)?);
            rngs.push(r);
        }
        self.evaluate(&envs, &mut rngs)
    }

    fn target_opts(&self) -> TargetOpts {
        TargetOpts { gamma: self.cfg.gamma, log_reward: self.cfg.log_reward, horizon: self.cfg.mode.horizon() }
    }
}

/// Owns a learner and its replay buffer and advances training epoch by epoch.
pub struct Trainer<S> {
    pub state: LearnerState<S>,
    pub buffer: ReplayBuffer,
    pub metrics: Vec<EpochMetrics>,
    rng: RandomSource,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(spec: PriorSpec, cfg: TrainConfig) -> Result<Self> {
        let state = LearnerState::new(spec, cfg)?;
        Ok(Self::resume(state))
    }

    pub fn resume(state: LearnerState<S>) -> Self {
        let rng = RandomSource::from_state(&state.rng);
        Self { buffer: ReplayBuffer::new(state.cfg.buffer_capacity), metrics: Vec::new(), rng, state }
    }

    fn loss_seqs<'a>(&self, sample: &'a [(Arc<Episode>, usize)]) -> Vec<LossSeq<'a>> {
        let mut index: HashMap<*const Episode, usize> = HashMap::new();
        let mut seqs: Vec<LossSeq<'a>> = Vec::new();
        let mode = self.state.cfg.mode;
        for (ep, t) in sample {
            let key = Arc::as_ptr(ep);
            let i = *index.entry(key).or_insert_with(|| {
                seqs.push(LossSeq { episode: ep.as_ref(), q_positions: Vec::new(), i_positions: Vec::new() });
                seqs.len() - 1
            });
            if self.state.cfg.batch_mode == BatchMode::Transitions {
                let s = &mut seqs[i];
                s.q_positions.push(*t);
                let next = if matches!(ep.action_at(*t), Some(crate::core::Action::Query(_))) { t + 1 } else { *t };
                s.i_positions.push(next);
            }
        }
        if self.state.cfg.batch_mode == BatchMode::Episodes {
            for s in &mut seqs {
                s.q_positions = s.episode.transition_positions(&mode);
                s.i_positions = (1..=s.episode.history.t()).collect();
            }
        }
        seqs
    }

    /// One gradient step on each network. Returns `(inference loss, q loss, grad norms)`.
    pub fn grad_step(&mut self) -> Result<(f64, f64, f64, f64)> {
        let sample = self.buffer.sample(self.state.cfg.batch_size, &mut self.rng);
        let seqs = self.loss_seqs(&sample);
        let st = &mut self.state;
        let (il, g_phi) = inference_loss(&st.infer, &seqs);
        let opts = st.target_opts();
        let (ql, g_theta) = match st.cfg.mode {
            EpisodeMode::FixedBudget { .. } => q_loss_fixed_budget(&st.q, &st.q_target, &st.infer_target, &seqs, &opts),
            EpisodeMode::FixedConfidence { .. } => {
                q_loss_fixed_confidence(&st.q, &st.q_target, &st.infer_target, &seqs, st.cost, &opts)
            }
        };
        if !il.is_finite() || !ql.is_finite() {
            let what = if il.is_finite() { "q loss" } else { "inference loss" };
            return Err(Error::DivergenceDetected { epoch: st.epoch, what: what.into() });
        }
        let n_phi = st.opt_phi.step(&mut st.infer.model.params, &g_phi);
        let n_theta = st.opt_theta.step(&mut st.q.model.params, &g_theta);
        if !st.infer.model.all_finite() || !st.q.model.all_finite() {
            return Err(Error::DivergenceDetected { epoch: st.epoch, what: "non-finite parameters".into() });
        }
        st.grad_steps += 1;
        if st.grad_steps % st.cfg.target_period_phi as u64 == 0 {
            st.infer_target = st.infer.clone();
        }
        if st.grad_steps % st.cfg.target_period_theta as u64 == 0 {
            st.q_target = st.q.clone();
        }
        Ok((il, ql, n_phi, n_theta))
    }

    /// Collect episodes, take gradient steps, evaluate and adapt the cost.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let epoch = self.state.epoch;
        let cfg = self.state.cfg.clone();
        let eps = epsilon_at(&cfg, epoch);
        let mut envs = Vec::with_capacity(cfg.episodes_per_epoch);
        let mut rngs = Vec::with_capacity(cfg.episodes_per_epoch);
        for i in 0..cfg.episodes_per_epoch {
            let mut r = RandomSource::derived(cfg.seed, &[1, epoch as u64, i as u64]);
            envs.push(sample_env(&self.state.spec, &mut r)?);
            rngs.push(r);
        }
        for ep in rollout_batch(&self.state.q, None, &envs, &mut rngs, cfg.mode, eps)? {
            self.buffer.add(ep, &cfg.mode);
        }
        let (mut il, mut ql, mut n_phi, mut n_theta) = (0.0, 0.0, 0.0, 0.0);
        let mut steps = 0;
        if self.buffer.len() >= cfg.batch_size.min(self.buffer.capacity) {
            for _ in 0..cfg.grad_steps_per_epoch {
                let (a, b, c, d) = self.grad_step()?;
                il += a;
                ql += b;
                n_phi += c;
                n_theta += d;
                steps += 1;
            }
        }
        let s = steps.max(1) as f64;
        let fc = cfg.mode.allows_stop();
        let last = epoch + 1 == cfg.epochs;
        let (mut p_hat, mut eval_tau) = (None, None);
        if fc || last || (cfg.eval_every > 0 && epoch % cfg.eval_every == 0) {
            let eps_eval = self.state.evaluate_fresh(cfg.eval_envs, cfg.seed, &[2, epoch as u64])?;
            let outcomes: Vec<bool> = eps_eval.iter().map(|e| e.correct()).collect();
            let p = outcomes.iter().filter(|&&o| o).count() as f64 / outcomes.len().max(1) as f64;
            p_hat = Some(p);
            eval_tau = Some(eps_eval.iter().map(|e| e.history.n_queries() as f64).sum::<f64>() / eps_eval.len().max(1) as f64);
            if let EpisodeMode::FixedConfidence { delta, .. } = cfg.mode {
                if epoch >= cfg.cost_warmup_epochs {
                    self.state.cost = cost_update(self.state.cost, delta, &outcomes, cfg.cost_beta);
                }
            }
            if let Some(cs) = self.state.cert.as_mut() {
                if seq_observe(cs, p) {
                    self.state.frozen = true;
                }
            }
        }
        self.state.epoch += 1;
        self.state.rng = self.rng.state();
        let m = EpochMetrics {
            epoch,
            epsilon: eps,
            inference_loss: il / s,
            q_loss: ql / s,
            grad_norm_phi: n_phi / s,
            grad_norm_theta: n_theta / s,
            p_hat,
            eval_tau,
            cost: self.state.cost,
            buffer_len: self.buffer.len(),
            certified: self.state.frozen,
        };
        self.metrics.push(m.clone());
        Ok(m)
    }

    /// Train until the epoch budget is spent or certification freezes the nets.
    pub fn run(&mut self) -> Result<()> {
        while self.state.epoch < self.state.cfg.epochs && !self.state.frozen {
            self.run_epoch()?;
        }
        Ok(())
    }
}

/// Train from scratch and return the final state with its metric log.
pub fn train<S: Scalar>(spec: &PriorSpec, cfg: &TrainConfig) -> Result<(LearnerState<S>, Vec<EpochMetrics>)> {
    let mut t = Trainer::new(spec.clone(), cfg.clone())?;
    t.run()?;
    Ok((t.state, t.metrics))
}

pub fn write_metrics_csv(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for m in metrics {
        w.serialize(m)?;
    }
    w.flush()?;
    Ok(())
}

const CKPT_MAGIC: &[u8; 8] = b"ICPECKPT";
const CKPT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CkptMeta {
    cfg: TrainConfig,
    spec: PriorSpec,
    enc: Encoder,
    infer_arch: ModelConfig,
    q_arch: ModelConfig,
    has_stop: bool,
    cost: f64,
    epoch: usize,
    grad_steps: u64,
    adam_t_phi: u64,
    adam_t_theta: u64,
    rng: RngState,
    cert: Option<SeqTestState>,
    frozen: bool,
    scalar_bytes: usize,
}

/// Binary checkpoint: magic, version, JSON metadata, then eight `f64` arrays
/// (parameters, target parameters and Adam moments of both networks).
pub fn save_checkpoint<S: Scalar>(st: &LearnerState<S>, path: &Path) -> Result<()> {
    let meta = CkptMeta {
        cfg: st.cfg.clone(),
        spec: st.spec.clone(),
        enc: st.q.enc,
        infer_arch: st.infer.model.cfg.clone(),
        q_arch: st.q.model.cfg.clone(),
        has_stop: st.q.has_stop,
        cost: st.cost,
        epoch: st.epoch,
        grad_steps: st.grad_steps,
        adam_t_phi: st.opt_phi.t,
        adam_t_theta: st.opt_theta.t,
        rng: st.rng.clone(),
        cert: st.cert.clone(),
        frozen: st.frozen,
        scalar_bytes: std::mem::size_of::<S>(),
    };
    let json = serde_json::to_vec(&meta)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    w.write_u32::<LittleEndian>(CKPT_VERSION)?;
    w.write_u64::<LittleEndian>(json.len() as u64)?;
    w.write_all(&json)?;
    for arr in [
        &st.infer.model.params,
        &st.q.model.params,
        &st.infer_target.model.params,
        &st.q_target.model.params,
        &st.opt_phi.m,
        &st.opt_phi.v,
        &st.opt_theta.m,
        &st.opt_theta.v,
    ] {
        w.write_u64::<LittleEndian>(arr.len() as u64)?;
        for v in arr.iter() {
            w.write_f64::<LittleEndian>(v.f64())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<LearnerState<S>> {
    let mut r = BufReader::new(File::open(path).map_err(|_| Error::CheckpointMissing(path.display().to_string()))?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(Error::CheckpointFormat("bad magic".into()));
    }
    let ver = r.read_u32::<LittleEndian>()?;
    if ver != CKPT_VERSION {
        return Err(Error::CheckpointFormat(format!("unsupported version {ver}")));
    }
    let n = r.read_u64::<LittleEndian>()? as usize;
    let mut json = vec![0u8; n];
    r.read_exact(&mut json)?;
    let meta: CkptMeta = serde_json::from_slice(&json)?;
    let mut arrays: Vec<Vec<S>> = Vec::with_capacity(8);
    for _ in 0..8 {
        let len = r.read_u64::<LittleEndian>()? as usize;
        let mut v = Vec::with_capacity(len);
        for _ in 0..len {
            v.push(S::of(r.read_f64::<LittleEndian>()?));
        }
        arrays.push(v);
    }
    let mut it = arrays.into_iter();
    let mut next = || it.next().expect("eight arrays");
    let bad = || Error::CheckpointFormat("parameter length mismatch".into());
    let model = |cfg: &ModelConfig, p: Vec<S>| SequenceModel::from_params(cfg.clone(), p).ok_or_else(bad);
    let infer = InferenceNet { model: model(&meta.infer_arch, next())?, enc: meta.enc };
    let q = QNet { model: model(&meta.q_arch, next())?, enc: meta.enc, has_stop: meta.has_stop };
    let infer_target = InferenceNet { model: model(&meta.infer_arch, next())?, enc: meta.enc };
    let q_target = QNet { model: model(&meta.q_arch, next())?, enc: meta.enc, has_stop: meta.has_stop };
    let opt_phi = Adam { cfg: meta.cfg.adam_phi.clone(), m: next(), v: next(), t: meta.adam_t_phi };
    let opt_theta = Adam { cfg: meta.cfg.adam_theta.clone(), m: next(), v: next(), t: meta.adam_t_theta };
    Ok(LearnerState {
        cfg: meta.cfg,
        spec: meta.spec,
        infer,
        q,
        infer_target,
        q_target,
        opt_phi,
        opt_theta,
        cost: meta.cost,
        epoch: meta.epoch,
        grad_steps: meta.grad_steps,
        rng: meta.rng,
        cert: meta.cert,
        frozen: meta.frozen,
    })
}
