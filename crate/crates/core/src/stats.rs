//! Hierarchical bootstrap over seed / environment / trajectory results and
//! survival curves of stopping times.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomSource;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: u64,
    pub correct: bool,
    pub tau: usize,
    #[serde(default)]
    pub extra: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvRecord {
    pub id: u64,
    pub trajectories: Vec<TrajectoryRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub id: u64,
    pub envs: Vec<EnvRecord>,
}

/// Results nested as seed -> environment -> trajectory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NestedResults {
    pub seeds: Vec<SeedRecord>,
}

/// Quantity extracted from each trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Metric {
    Correct,
    Tau,
    Extra(String),
}

impl Metric {
    pub fn eval(&self, t: &TrajectoryRecord) -> f64 {
        match self {
            Metric::Correct => t.correct as u8 as f64,
            Metric::Tau => t.tau as f64,
            Metric::Extra(k) => t.extra.get(k).copied().unwrap_or(f64::NAN),
        }
    }
}

impl NestedResults {
    /// Nest metric values as `values[seed][env][trajectory]`.
    pub fn values(&self, metric: &Metric) -> Result<Vec<Vec<Vec<f64>>>> {
        if self.seeds.is_empty() {
            return Err(Error::EmptyLevel("no seeds".into()));
        }
        self.seeds
            .iter()
            .map(|s| {
                if s.envs.is_empty() {
                    return Err(Error::EmptyLevel(format!("seed {} has no environments", s.id)));
                }
                s.envs
                    .iter()
                    .map(|e| {
                        if e.trajectories.is_empty() {
                            return Err(Error::EmptyLevel(format!("env {} of seed {} has no trajectories", e.id, s.id)));
                        }
                        Ok(e.trajectories.iter().map(|t| metric.eval(t)).collect())
                    })
                    .collect()
            })
            .collect()
    }

    pub fn n_trajectories(&self) -> usize {
        self.seeds.iter().flat_map(|s| &s.envs).map(|e| e.trajectories.len()).sum()
    }

    pub fn all_trajectories(&self) -> impl Iterator<Item = &TrajectoryRecord> {
        self.seeds.iter().flat_map(|s| &s.envs).flat_map(|e| &e.trajectories)
    }
}

/// Mean of means across the three levels.
pub fn nested_mean(v: &[Vec<Vec<f64>>]) -> f64 {
    mean(&v.iter().map(|s| mean(&s.iter().map(|e| mean(e)).collect::<Vec<_>>())).collect::<Vec<_>>())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Variance of the replicate means.
    pub replicate_var: f64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn summarize(point: f64, mut reps: Vec<f64>) -> BootstrapCi {
    let m = mean(&reps);
    let var = reps.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / (reps.len() - 1).max(1) as f64;
    reps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    BootstrapCi { mean: point, ci_low: percentile(&reps, 0.025), ci_high: percentile(&reps, 0.975), replicate_var: var }
}

/// Percentile CI of the grand mean resampling seeds, then environments within
/// each drawn seed, then trajectories within each drawn environment.
pub fn hierarchical_bootstrap(data: &NestedResults, metric: &Metric, reps: usize, rng: &mut RandomSource) -> Result<BootstrapCi> {
    if reps < 100 {
        return Err(Error::DomainError(format!("need at least 100 replicates, got {reps}")));
    }
    let v = data.values(metric)?;
    let base = rng.split().uniform().to_bits();
    let out: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut g = RandomSource::derived(base, &[r as u64]);
            let seeds: Vec<f64> = (0..v.len())
                .map(|_| {
                    let s = &v[g.below(v.len())];
                    let envs: Vec<f64> = (0..s.len())
                        .map(|_| {
                            let e = &s[g.below(s.len())];
                            (0..e.len()).map(|_| e[g.below(e.len())]).sum::<f64>() / e.len() as f64
                        })
                        .collect();
                    mean(&envs)
                })
                .collect();
            mean(&seeds)
        })
        .collect();
    Ok(summarize(nested_mean(&v), out))
}

/// Flat bootstrap that resamples all trajectories and ignores the nesting.
pub fn flat_bootstrap(data: &NestedResults, metric: &Metric, reps: usize, rng: &mut RandomSource) -> Result<BootstrapCi> {
    let v = data.values(metric)?;
    let flat: Vec<f64> = v.iter().flatten().flatten().copied().collect();
    let base = rng.split().uniform().to_bits();
    let out: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut g = RandomSource::derived(base, &[r as u64]);
            (0..flat.len()).map(|_| flat[g.below(flat.len())]).sum::<f64>() / flat.len() as f64
        })
        .collect();
    Ok(summarize(mean(&flat), out))
}

/// Empirical survival function `P(tau > t)` on `t_grid`.
pub fn survival_curve(taus: &[usize], t_grid: &[usize]) -> Result<Vec<f64>> {
    if taus.is_empty() {
        return Err(Error::EmptyLevel("no stopping times".into()));
    }
    let n = taus.len() as f64;
    Ok(t_grid.iter().map(|&t| taus.iter().filter(|&&x| x > t).count() as f64 / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> NestedResults {
        NestedResults {
            seeds: vec![SeedRecord {
                id: 0,
                envs: vec![EnvRecord {
                    id: 0,
                    trajectories: vec![TrajectoryRecord { id: 0, correct: v > 0.5, tau: v as usize, extra: BTreeMap::new() }],
                }],
            }],
        }
    }

    #[test]
    fn degenerate_ci() {
        let ci = hierarchical_bootstrap(&single(3.0), &Metric::Tau, 200, &mut RandomSource::new(1)).unwrap();
        assert_eq!((ci.mean, ci.ci_low, ci.ci_high), (3.0, 3.0, 3.0));
    }

    #[test]
    fn survival_examples() {
        assert_eq!(survival_curve(&[1, 2, 3], &[1, 2, 3]).unwrap(), vec![2.0 / 3.0, 1.0 / 3.0, 0.0]);
        assert_eq!(survival_curve(&[5; 4], &[4, 5]).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn empty_level() {
        let d = NestedResults { seeds: vec![SeedRecord { id: 0, envs: vec![] }] };
        assert!(matches!(hierarchical_bootstrap(&d, &Metric::Tau, 100, &mut RandomSource::new(0)), Err(Error::EmptyLevel(_))));
    }
}
