use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use icpe::bounds::{magic_char_time, min_gap_bounds, multi_magic_upper};
use icpe::cert::{seq_boundary, seq_observe, SeqTestState};
use icpe::envs::Phi;
use icpe::exact::{dual_search, save_table, solve_fixed_budget, solve_fixed_confidence};
use icpe::harness::{
    binary_search_table, load_run, natural_grid, run_and_write, summary_table, survival_table, to_csv, Counts, ExperimentConfig,
    PriorConfig,
};
use icpe::learner::{save_checkpoint, write_metrics_csv, TrainConfig, Trainer};
use icpe::posterior::ObsGrid;
use icpe::stats::{hierarchical_bootstrap, Metric};
use icpe::RandomSource;

#[derive(Parser)]
#[command(name = "icpe", version, about = "Meta-trained sequential explorers, exact solvers and baselines")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a learner and write its checkpoint and metric log.
    Train(TrainArgs),
    /// Run an experiment config and write its result files.
    Eval {
        #[arg(long)]
        config: PathBuf,
    },
    /// Solve a finite prior exactly.
    ExactSolve(ExactArgs),
    /// Tabulate sample-complexity bounds.
    Bounds {
        #[command(subcommand)]
        which: BoundsCmd,
    },
    /// Replay the sequential correctness test over a metric log.
    Certify(CertifyArgs),
    /// Hierarchical bootstrap CI of one metric of a finished run.
    Bootstrap {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "correct")]
        metric: String,
        #[arg(long, default_value_t = 2000)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Assemble report tables as CSV.
    Report {
        #[command(subcommand)]
        which: ReportCmd,
        /// Write to this file instead of stdout.
        #[arg(long, global = true)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// TOML file with `prior`, `train`, `checkpoint` and `metrics` entries.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Deserialize)]
struct TrainFile {
    prior: PriorConfig,
    #[serde(default)]
    train: TrainConfig,
    checkpoint: PathBuf,
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct ExactArgs {
    /// two-model-det, binary-search, ...
    #[arg(long)]
    prior: String,
    #[arg(long = "K", alias = "k", default_value_t = 2)]
    k: usize,
    /// Fixed budget; omit for fixed confidence.
    #[arg(long, conflicts_with = "delta")]
    budget: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, default_value_t = 5)]
    n_max: usize,
    /// Stop bonus; searched for the smallest delta-correct value when omitted.
    #[arg(long)]
    lambda: Option<f64>,
    /// Cells per observation axis for Gaussian priors.
    #[arg(long, default_value_t = 8)]
    cells: usize,
    /// Save the value table here.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BoundsCmd {
    /// Upper bound for a magic chain, one row per chain length.
    MultiMagic {
        #[arg(long = "K", alias = "k")]
        k: usize,
        /// Range `a..b` (inclusive) or a single value.
        #[arg(long)]
        n: String,
    },
    /// Lower and upper bounds for the min-gap Gaussian class.
    MinGap {
        #[arg(long, value_delimiter = ',')]
        mu: Vec<f64>,
        #[arg(long, default_value_t = 0.5)]
        sigma: f64,
        #[arg(long, default_value_t = 0.4)]
        delta0: f64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
    },
    /// Characteristic time with a magic arm (arm 0) and phi(x) = 1/x.
    Magic {
        #[arg(long, value_delimiter = ',')]
        mu: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma_m: f64,
    },
}

#[derive(Args)]
struct CertifyArgs {
    #[arg(long)]
    metrics: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    delta_prime: f64,
    #[arg(long, default_value_t = 0.05)]
    eta: f64,
    /// Evaluation rollouts per epoch.
    #[arg(long, default_value_t = 64)]
    b: usize,
}

#[derive(Subcommand)]
enum ReportCmd {
    /// Table of accuracy and stopping times for binary-search checkpoints.
    BinarySearch {
        #[arg(long, required = true)]
        ckpt: Vec<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        #[arg(long, default_value_t = 100)]
        envs: usize,
        #[arg(long, default_value_t = 1234)]
        seed: u64,
    },
    /// Correctness and stopping time with CIs per run.
    Summary {
        #[arg(long, required = true)]
        run: Vec<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        reps: usize,
    },
    /// Survival curves of the stopping time, one column per run.
    Survival {
        #[arg(long, required = true)]
        run: Vec<PathBuf>,
    },
}

fn parse_range(s: &str) -> Result<Vec<usize>> {
    if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.parse().context("range start")?;
        let b: usize = b.trim_start_matches('=').parse().context("range end")?;
        if a > b {
            bail!("empty range {s}");
        }
        Ok((a..=b).collect())
    } else {
        Ok(vec![s.parse().context("chain length")?])
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let text = fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let mut f: TrainFile = toml::from_str(&text)?;
    if let Some(e) = a.epochs {
        f.train.epochs = e;
    }
    if let Some(s) = a.seed {
        f.train.seed = s;
    }
    let ckpt = a.checkpoint.unwrap_or(f.checkpoint);
    let spec = f.prior.build()?;
    let mut t = Trainer::<f32>::new(spec, f.train)?;
    while t.state.epoch < t.state.cfg.epochs && !t.state.frozen {
        let m = t.run_epoch()?;
        if let (Some(p), Some(tau)) = (m.p_hat, m.eval_tau) {
            eprintln!("epoch {:>5}  il {:.4}  ql {:.5}  p {:.3}  tau {:.3}  c {:.4}", m.epoch, m.inference_loss, m.q_loss, p, tau, m.cost);
        }
    }
    ensure_parent(&ckpt)?;
    save_checkpoint(&t.state, &ckpt)?;
    if let Some(p) = f.metrics {
        ensure_parent(&p)?;
        write_metrics_csv(&p, &t.metrics)?;
    }
    println!("{}", ckpt.display());
    Ok(())
}

fn exact(a: ExactArgs) -> Result<()> {
    let spec = PriorConfig::from_name(&a.prior, a.k)?.build()?;
    let grid: ObsGrid = natural_grid(&spec, a.cells)?;
    if let Some(n) = a.budget {
        let (table, v) = solve_fixed_budget(&spec, n, &grid)?;
        println!("optimal value {v:?}");
        if let Some(p) = a.table {
            save_table(&table, &p)?;
        }
        return Ok(());
    }
    let delta = a.delta.unwrap_or(0.1);
    let (lambda, sol) = match a.lambda {
        Some(l) => (l, solve_fixed_confidence(&spec, l, a.n_max, delta, &grid)?),
        None => {
            let d = dual_search(&spec, delta, a.n_max, &grid)?;
            (d.lambda_star, d.solution)
        }
    };
    println!("lambda,policy_value,correctness,expected_tau");
    println!("{lambda},{},{},{}", sol.policy_value, sol.achieved_correctness, sol.expected_tau);
    if let Some(p) = a.table {
        save_table(&sol.table, &p)?;
    }
    Ok(())
}

fn bounds(b: BoundsCmd) -> Result<()> {
    match b {
        BoundsCmd::MultiMagic { k, n } => {
            println!("n,upper");
            for n in parse_range(&n)? {
                println!("{n},{}", multi_magic_upper(k, n)?);
            }
        }
        BoundsCmd::MinGap { mu, sigma, delta0, delta } => {
            let r = min_gap_bounds(&mu, sigma, delta0, delta)?;
            println!("lower,upper\n{},{}", r.lower, r.upper);
        }
        BoundsCmd::Magic { mu, sigma, sigma_m } => {
            let r = magic_char_time(&mu, sigma, sigma_m, Phi::Inverse)?;
            let w = r.witness.unwrap_or_default();
            println!("char_time,{}", (0..w.len()).map(|i| format!("w{i}")).collect::<Vec<_>>().join(","));
            println!("{},{}", r.lower, w.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","));
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct MetricRow {
    epoch: usize,
    p_hat: Option<f64>,
}

fn certify(a: CertifyArgs) -> Result<()> {
    let mut r = csv::Reader::from_path(&a.metrics).with_context(|| format!("reading {}", a.metrics.display()))?;
    let mut st = SeqTestState::new(a.delta_prime, a.eta, a.b);
    println!("epoch,p_hat,running_mean,boundary,triggered");
    for row in r.deserialize::<MetricRow>() {
        let row = row?;
        let Some(p) = row.p_hat else { continue };
        let fired = seq_observe(&mut st, p);
        println!("{},{p},{},{},{}", row.epoch, st.mean(), seq_boundary(st.t, a.b, a.delta_prime, a.eta), fired);
    }
    match st.triggered_at {
        Some(t) => eprintln!("certified after {t} evaluations"),
        None => eprintln!("not certified"),
    }
    Ok(())
}

fn metric(name: &str) -> Result<Metric> {
    Ok(match name {
        "correct" => Metric::Correct,
        "tau" => Metric::Tau,
        "unique_frac" => Metric::Extra("unique_frac".into()),
        other if other.starts_with("pulls_") => Metric::Extra(other.into()),
        other => bail!("unknown metric `{other}`"),
    })
}

fn report(which: ReportCmd, out: Option<PathBuf>) -> Result<()> {
    let text = match which {
        ReportCmd::BinarySearch { ckpt, seeds, envs, seed } => {
            let rows = binary_search_table(&ckpt, Counts { seeds, envs_per_seed: envs, trajectories_per_env: 1 }, seed)?;
            to_csv(&rows)?
        }
        ReportCmd::Summary { run, reps } => {
            let runs = run.iter().map(|p| load_run(p)).collect::<icpe::Result<Vec<_>>>()?;
            let rows = summary_table(&runs, reps, 0)?;
            let mut s = String::from("name,algorithm,k,correct,correct_lo,correct_hi,tau,tau_lo,tau_hi\n");
            for r in rows {
                s += &format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    r.name, r.algorithm, r.k, r.correct.mean, r.correct.ci_low, r.correct.ci_high, r.tau.mean, r.tau.ci_low, r.tau.ci_high
                );
            }
            s
        }
        ReportCmd::Survival { run } => {
            let runs = run.iter().map(|p| load_run(p)).collect::<icpe::Result<Vec<_>>>()?;
            let (grid, curves) = survival_table(&runs)?;
            let mut s = String::from("t");
            for r in &runs {
                s += &format!(",{}", r.manifest.config.name);
            }
            s.push('\n');
            for (i, t) in grid.iter().enumerate() {
                s += &t.to_string();
                for c in &curves {
                    s += &format!(",{}", c[i]);
                }
                s.push('\n');
            }
            s
        }
    };
    emit(&out, &text)
}

fn ensure_parent(p: &Path) -> Result<()> {
    if let Some(d) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(d)?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Train(a) => train(a),
        Cmd::Eval { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let (res, m) = run_and_write(&cfg)?;
            let n = res.n_trajectories() as f64;
            let acc = res.all_trajectories().filter(|t| t.correct).count() as f64 / n;
            let tau = res.all_trajectories().map(|t| t.tau as f64).sum::<f64>() / n;
            println!("{} trajectories  correctness {acc:.4}  mean tau {tau:.3}  hash {}", res.n_trajectories(), m.config_hash);
            Ok(())
        }
        Cmd::ExactSolve(a) => exact(a),
        Cmd::Bounds { which } => bounds(which),
        Cmd::Certify(a) => certify(a),
        Cmd::Bootstrap { run, metric: m, reps, seed } => {
            let r = load_run(&run)?;
            let ci = hierarchical_bootstrap(&r.results, &metric(&m)?, reps, &mut RandomSource::new(seed))?;
            println!("metric,mean,ci_low,ci_high,replicate_var\n{m},{},{},{},{}", ci.mean, ci.ci_low, ci.ci_high, ci.replicate_var);
            Ok(())
        }
        Cmd::Report { which, out } => report(which, out),
    }
}
