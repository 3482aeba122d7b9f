//! Active sequential hypothesis testing toolkit.
//!
//! Meta-trained in-context explorers, exact Bayes-optimal solvers on finite
//! priors, classical best-arm baselines, characteristic-time bounds, training
//! certification and a seeded experiment harness.

pub mod baselines;
pub mod bounds;
pub mod cert;
pub mod core;
pub mod envs;
pub mod error;
pub mod exact;
pub mod harness;
pub mod nn;
pub mod learner;
pub mod posterior;
pub mod rng;
pub mod scalar;
pub mod stats;

pub use crate::core::{Action, EpisodeMode, History, Hypothesis, Observation, Policy};
pub use crate::error::{Error, Result};
pub use crate::rng::RandomSource;
pub use crate::scalar::Scalar;

/// Single-precision learner types, the default for training.
pub type Trainer32 = learner::Trainer<f32>;
pub type LearnerState32 = learner::LearnerState<f32>;
pub type QNet32 = learner::QNet<f32>;
pub type InferenceNet32 = learner::InferenceNet<f32>;

/// Double-precision learner types, used for gradient certification.
pub type Trainer64 = learner::Trainer<f64>;
pub type LearnerState64 = learner::LearnerState<f64>;
pub type QNet64 = learner::QNet<f64>;
pub type InferenceNet64 = learner::InferenceNet<f64>;
