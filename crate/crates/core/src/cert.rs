//! Training-correctness certification: an anytime sequential test on
//! per-epoch evaluation accuracies and a fixed-sample Hoeffding bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Anytime boundary for the running mean of `t` batch accuracies of size `b`.
pub fn seq_boundary<S: Scalar>(t: usize, b: usize, delta_prime: S, eta: S) -> S {
    let one = S::one();
    let tt = S::of_usize(t);
    let rho = (one - delta_prime) / S::of_usize(b);
    let v = one + rho * tt;
    (one - delta_prime) + (S::of(2.0) * v * (v.sqrt() / eta).ln()).sqrt() / tt
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeqTestState {
    pub t: usize,
    pub sum: f64,
    pub delta_prime: f64,
    pub eta: f64,
    pub b: usize,
    /// First epoch at which the boundary was crossed.
    pub triggered_at: Option<usize>,
}

impl SeqTestState {
    pub fn new(delta_prime: f64, eta: f64, b: usize) -> Self {
        Self { t: 0, sum: 0.0, delta_prime, eta, b, triggered_at: None }
    }

    pub fn mean(&self) -> f64 {
        if self.t == 0 {
            0.0
        } else {
            self.sum / self.t as f64
        }
    }
}

/// Record one batch accuracy; returns whether the boundary is crossed now.
pub fn seq_observe(state: &mut SeqTestState, x: f64) -> bool {
    debug_assert!((0.0..=1.0).contains(&x));
    state.t += 1;
    state.sum += x;
    let hit = state.mean() >= seq_boundary(state.t, state.b, state.delta_prime, state.eta);
    if hit && state.triggered_at.is_none() {
        state.triggered_at = Some(state.t);
    }
    hit
}

/// One-sided Hoeffding lower confidence bound on a success probability.
pub fn hoeffding_lower(successes: usize, n: usize, confidence: f64) -> Result<f64> {
    if n == 0 || successes > n {
        return Err(Error::DomainError(format!("need 0 <= successes <= n and n > 0, got {successes}/{n}")));
    }
    let p = successes as f64 / n as f64;
    Ok(p - ((1.0 / (1.0 - confidence)).ln() / (2.0 * n as f64)).sqrt())
}
