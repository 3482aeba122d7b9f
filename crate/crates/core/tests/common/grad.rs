//! Central finite differences against the analytic loss gradients.

use icpe::core::{Action, EpisodeMode, Observation, StopReason};
use icpe::envs::{sample_env, PriorSpec};
use icpe::learner::*;
use icpe::nn::ModelConfig;
use icpe::RandomSource;

pub fn arch() -> ModelConfig {
    ModelConfig { d_in: 0, d_model: 8, n_layers: 2, n_heads: 2, d_ff: 16, max_len: 6, d_out: 0 }
}

pub fn gaussian_spec() -> PriorSpec {
    PriorSpec::gaussian_models(&[vec![1.0, 0.2, 0.0], vec![0.0, 1.0, 0.3], vec![0.4, 0.0, 1.0]], 0.5).unwrap()
}

pub fn jitter(p: &mut [f64], seed: u64) {
    let mut r = RandomSource::new(seed);
    for v in p {
        *v += r.normal(0.0, 0.05);
    }
}

/// Worst errors over 20 coordinates: relative where the gradient is visible,
/// absolute where both estimates are essentially zero.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub worst_rel: f64,
    pub worst_tiny_abs: f64,
}

fn check(params: &mut [f64], grad: &[f64], loss: &mut dyn FnMut(&[f64]) -> f64, seed: u64) -> GradCheck {
    let mut r = RandomSource::new(seed);
    let h = 1e-5;
    let mut out = GradCheck { worst_rel: 0.0, worst_tiny_abs: 0.0 };
    let (mut checked, mut tries) = (0, 0);
    while checked < 20 && tries < 10_000 {
        tries += 1;
        let i = r.below(params.len());
        let orig = params[i];
        params[i] = orig + h;
        let lp = loss(params);
        params[i] = orig - h;
        let lm = loss(params);
        params[i] = orig;
        let fd = (lp - lm) / (2.0 * h);
        if fd.abs().max(grad[i].abs()) < 1e-7 {
            out.worst_tiny_abs = out.worst_tiny_abs.max((fd - grad[i]).abs());
            continue;
        }
        out.worst_rel = out.worst_rel.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()));
        checked += 1;
    }
    if checked < 20 {
        out.worst_rel = f64::INFINITY;
    }
    out
}

pub struct Fixture {
    pub enc: Encoder,
    pub episodes: Vec<Episode>,
}

pub fn fixture(mode: EpisodeMode) -> Fixture {
    let spec = gaussian_spec();
    let enc = Encoder { k: 3, d_obs: 1 };
    let mut r = RandomSource::new(5);
    let q = QNet::<f64>::new(enc, mode.allows_stop(), &arch(), &mut r);
    let envs: Vec<_> = (0..8).map(|_| sample_env(&spec, &mut r).unwrap()).collect();
    let mut rngs: Vec<_> = (0..8).map(|i| RandomSource::derived(9, &[i])).collect();
    let mut episodes = rollout_batch(&q, None, &envs, &mut rngs, mode, 1.0).unwrap();
    if mode.allows_stop() {
        let mut h = episodes[0].history.prefix(3);
        h.push(Action::Stop, Observation::blank(0)).unwrap();
        episodes.push(Episode { history: h, h_star: 1, end: StopReason::StopAction, recommended: None });
    }
    Fixture { enc, episodes }
}

fn seqs<'a>(f: &'a Fixture, mode: &EpisodeMode) -> Vec<LossSeq<'a>> {
    f.episodes
        .iter()
        .map(|e| LossSeq { episode: e, q_positions: e.transition_positions(mode), i_positions: (1..=e.history.t()).collect() })
        .collect()
}

pub fn inference_gradient_check() -> GradCheck {
    let mode = EpisodeMode::FixedBudget { n: 4 };
    let f = fixture(mode);
    let mut net = InferenceNet::<f64>::new(f.enc, 3, &arch(), &mut RandomSource::new(7));
    jitter(&mut net.model.params, 8);
    let s = seqs(&f, &mode);
    let (_, g) = inference_loss(&net, &s);
    let mut p = net.model.params.clone();
    let mut probe = net.clone();
    check(&mut p, &g, &mut |p| {
        probe.model.params.copy_from_slice(p);
        inference_loss(&probe, &s).0
    }, 10)
}

pub fn fixed_budget_gradient_check() -> GradCheck {
    let mode = EpisodeMode::FixedBudget { n: 4 };
    let f = fixture(mode);
    let mut r = RandomSource::new(11);
    let mut q = QNet::<f64>::new(f.enc, false, &arch(), &mut r);
    let qb = QNet::<f64>::new(f.enc, false, &arch(), &mut r);
    let ib = InferenceNet::<f64>::new(f.enc, 3, &arch(), &mut r);
    jitter(&mut q.model.params, 12);
    let s = seqs(&f, &mode);
    let opts = TargetOpts { gamma: 0.9, log_reward: false, horizon: 4 };
    let (_, g) = q_loss_fixed_budget(&q, &qb, &ib, &s, &opts);
    let mut p = q.model.params.clone();
    let mut probe = q.clone();
    check(&mut p, &g, &mut |p| {
        probe.model.params.copy_from_slice(p);
        q_loss_fixed_budget(&probe, &qb, &ib, &s, &opts).0
    }, 13)
}

pub fn fixed_confidence_gradient_check() -> GradCheck {
    let mode = EpisodeMode::FixedConfidence { delta: 0.1, n_max: 4 };
    let f = fixture(mode);
    let mut r = RandomSource::new(14);
    let mut q = QNet::<f64>::new(f.enc, true, &arch(), &mut r);
    let qb = QNet::<f64>::new(f.enc, true, &arch(), &mut r);
    let ib = InferenceNet::<f64>::new(f.enc, 3, &arch(), &mut r);
    jitter(&mut q.model.params, 15);
    let s = seqs(&f, &mode);
    let opts = TargetOpts { gamma: 1.0, log_reward: false, horizon: 4 };
    let (_, g) = q_loss_fixed_confidence(&q, &qb, &ib, &s, 0.05, &opts);
    let mut p = q.model.params.clone();
    let mut probe = q.clone();
    check(&mut p, &g, &mut |p| {
        probe.model.params.copy_from_slice(p);
        q_loss_fixed_confidence(&probe, &qb, &ib, &s, 0.05, &opts).0
    }, 16)
}
