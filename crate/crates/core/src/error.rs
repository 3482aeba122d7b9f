//! Error type shared by every module of the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("policy emitted the stop action in a fixed-budget episode")]
    PolicyEmittedStopInFixedBudget,
    #[error("history length {len} exceeds horizon cap {cap}")]
    HorizonCapExceeded { len: usize, cap: usize },
    #[error("cannot append to a history that already ended with stop")]
    AppendAfterStop,
    #[error("invalid action index {index} for {k} queries")]
    InvalidAction { index: usize, k: usize },
    #[error("rejection sampling exhausted after {attempts} attempts")]
    RejectionBudgetExhausted { attempts: usize },
    #[error("bad feedback-graph parameters: {0}")]
    BadGraphParams(String),
    #[error("two arms share the maximal mean")]
    TieAtOptimum,
    #[error("history has zero likelihood under every support model")]
    ZeroLikelihoodEverywhere,
    #[error("observation grid is empty")]
    EmptyGrid,
    #[error("prior grid too coarse: {survivors} surviving models")]
    GridTooCoarse { survivors: usize },
    #[error("state space too large: more than {limit} history nodes")]
    StateSpaceTooLarge { limit: usize },
    #[error("target correctness {target} unreachable within horizon (best {best})")]
    InfeasibleAtHorizon { target: f64, best: f64 },
    #[error("training diverged at epoch {epoch}: {what}")]
    DivergenceDetected { epoch: usize, what: String },
    #[error("all empirical means equal")]
    DegenerateGaps,
    #[error("arm {0} has not been pulled")]
    UnpulledArm(usize),
    #[error("hypothesis count {hyps} differs from action count {actions}")]
    HypothesisActionMismatch { hyps: usize, actions: usize },
    #[error("top-two gap {gap} below minimum {min_gap}")]
    GapViolation { gap: f64, min_gap: f64 },
    #[error("optimizer did not converge (best value {best})")]
    NonConvergence { best: f64 },
    #[error("empty level in nested results: {0}")]
    EmptyLevel(String),
    #[error("unknown algorithm `{0}`")]
    UnknownAlgorithm(String),
    #[error("checkpoint missing: {0}")]
    CheckpointMissing(String),
    #[error("argument outside domain: {0}")]
    DomainError(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),
    #[error("mismatched config hashes: {0} vs {1}")]
    HashMismatch(String, String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("toml: {0}")]
    Toml(String),
}
