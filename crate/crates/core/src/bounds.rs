//! Characteristic-time and sample-complexity bound calculators.

use crate::envs::Phi;
use crate::error::{Error, Result};
use crate::rng::RandomSource;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct BoundResult<S> {
    pub lower: S,
    pub upper: S,
    pub witness: Option<Vec<S>>,
    /// Per-arm contribution to the bound.
    pub components: Vec<S>,
}

/// Bernoulli relative entropy `kl(x, y)`.
pub fn kl_bernoulli<S: Scalar>(x: S, y: S) -> Result<S> {
    let (zero, one) = (S::zero(), S::one());
    if !(x > zero && x < one && y > zero && y < one) {
        return Err(Error::DomainError(format!("kl needs x, y in (0,1), got ({x}, {y})")));
    }
    Ok(x * (x / y).ln() + (one - x) * ((one - x) / (one - y)).ln())
}

/// Lower and upper sample-complexity bounds for the min-gap Gaussian class.
pub fn min_gap_bounds<S: Scalar>(mu: &[S], sigma: S, delta0: S, delta: S) -> Result<BoundResult<S>> {
    let two = S::of(2.0);
    let best = (0..mu.len()).fold(0, |b, i| if mu[i] > mu[b] { i } else { b });
    let gaps: Vec<S> = mu.iter().map(|&m| mu[best] - m).collect();
    let min_gap = gaps.iter().enumerate().filter(|(i, _)| *i != best).map(|(_, &g)| g).fold(S::infinity(), S::min);
    if min_gap < delta0 {
        return Err(Error::GapViolation { gap: min_gap.f64(), min_gap: delta0.f64() });
    }
    let kl = kl_bernoulli(S::one() - delta, delta)?;
    let scale = two * sigma * sigma * kl;
    let inv_sq: S = gaps.iter().enumerate().filter(|(i, _)| *i != best).map(|(_, &g)| S::one() / (g * g)).sum();
    let lower = scale / (delta0 * delta0).max(S::one() / inv_sq);
    let comp: Vec<S> = gaps.iter().map(|&g| S::one() / ((g + delta0) * (g + delta0))).collect();
    let total: S = comp.iter().copied().sum();
    let upper = scale * two * total;
    let witness = comp.iter().map(|&c| c / total).collect();
    Ok(BoundResult { lower, upper, witness: Some(witness), components: comp.iter().map(|&c| scale * two * c).collect() })
}

/// Instance data of the magic-action characteristic-time program. Arm 0 is magic.
#[derive(Clone, Debug)]
pub struct MagicProgram {
    pub mu: Vec<f64>,
    pub sigma: f64,
    pub sigma_m: f64,
    pub a_star: usize,
    /// Magic-arm information `(phi(a*) - phi(a))^2 / (2 sigma_m^2)` per arm.
    pub f1: Vec<f64>,
    /// The alternative's best arm must exceed every value the magic arm can take.
    pub threshold: f64,
}

impl MagicProgram {
    pub fn new(mu: &[f64], sigma: f64, sigma_m: f64, phi: Phi) -> Result<Self> {
        let k = mu.len();
        if k < 3 {
            return Err(Error::DomainError("magic program needs K >= 3".into()));
        }
        let a_star = (2..k).fold(1, |b, i| if mu[i] > mu[b] { i } else { b });
        let threshold = (2..=k).map(|i| phi.eval(i, k)).fold(f64::NEG_INFINITY, f64::max);
        if mu[a_star] <= threshold {
            return Err(Error::DomainError("best arm must exceed every magic-arm value".into()));
        }
        let fa = phi.eval(a_star + 1, k);
        let f1 = (0..k)
            .map(|a| {
                let d = fa - phi.eval(a + 1, k);
                if sigma_m > 0.0 {
                    d * d / (2.0 * sigma_m * sigma_m)
                } else if d == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        Ok(Self { mu: mu.to_vec(), sigma, sigma_m, a_star, f1, threshold })
    }

    pub fn k(&self) -> usize {
        self.mu.len()
    }

    /// Common level `m` of the confusing arms when `a` is made optimal.
    pub fn level(&self, w: &[f64], a: usize) -> f64 {
        let mut others: Vec<usize> = (1..self.k()).filter(|&b| b != a).collect();
        others.sort_by(|&x, &y| self.mu[y].partial_cmp(&self.mu[x]).unwrap());
        let (mut ws, mut wm) = (w[a], w[a] * self.mu[a]);
        let mut m = if ws > 0.0 { wm / ws } else { f64::NEG_INFINITY };
        for b in others {
            if self.mu[b] > m {
                if w[b] > 0.0 {
                    ws += w[b];
                    wm += w[b] * self.mu[b];
                    m = wm / ws;
                }
            } else {
                break;
            }
        }
        if ws == 0.0 {
            m = self.mu[a];
        }
        m.max(self.threshold)
    }

    /// Inner value for alternative arm `a`, with its gradient in `grad` (if given).
    pub fn inner(&self, w: &[f64], a: usize, grad: Option<&mut [f64]>) -> f64 {
        let m = self.level(w, a);
        let s2 = 2.0 * self.sigma * self.sigma;
        let mut d = vec![0.0; self.k()];
        d[0] = self.f1[a];
        for b in 1..self.k() {
            let gap = if b == a { self.mu[a] - m } else { (self.mu[b] - m).max(0.0) };
            d[b] = gap * gap / s2;
        }
        let v = (0..self.k()).map(|b| if w[b] == 0.0 { 0.0 } else { w[b] * d[b] }).sum();
        if let Some(g) = grad {
            g.copy_from_slice(&d);
        }
        v
    }

    pub fn alternatives(&self) -> Vec<usize> {
        (1..self.k()).filter(|&a| a != self.a_star).collect()
    }

    /// `(T*)^{-1}` at allocation `w`: minimum over alternatives.
    pub fn objective(&self, w: &[f64]) -> f64 {
        self.alternatives().into_iter().map(|a| self.inner(w, a, None)).fold(f64::INFINITY, f64::min)
    }
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut css = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        css += ui;
        let t = (css - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Soft-min over alternatives at temperature `tau`, with its gradient.
fn soft_objective(prog: &MagicProgram, w: &[f64], tau: f64, grad: Option<&mut Vec<f64>>) -> f64 {
    let k = prog.k();
    let alts = prog.alternatives();
    let mut ds = vec![vec![0.0; k]; alts.len()];
    let vals: Vec<f64> = alts.iter().zip(ds.iter_mut()).map(|(&a, d)| prog.inner(w, a, Some(d))).collect();
    let vmin = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = vals.iter().map(|&v| (-(v - vmin) / tau).exp()).collect();
    let z: f64 = e.iter().sum();
    if let Some(g) = grad {
        g.iter_mut().for_each(|x| *x = 0.0);
        for (ej, d) in e.iter().zip(&ds) {
            for b in 0..k {
                g[b] += ej / z * d[b];
            }
        }
    }
    vmin - tau * z.ln()
}

fn dirichlet_one(k: usize, rng: &mut RandomSource) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| -rng.uniform().max(1e-300).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Characteristic time of a magic-action instance (arm 0 magic).
///
/// Softmin-smoothed projected gradient ascent with backtracking and annealed
/// temperature over 20 restarts, polished on the exact objective. `lower` and `upper` both hold
/// `T*`; multiply by `kl(1-delta, delta)` for query counts.
pub fn magic_char_time(mu: &[f64], sigma: f64, sigma_m: f64, phi: Phi) -> Result<BoundResult<f64>> {
    let prog = MagicProgram::new(mu, sigma, sigma_m, phi)?;
    let k = prog.k();
    if sigma_m == 0.0 {
        let mut w = vec![0.0; k];
        w[0] = 1.0;
        return Ok(BoundResult { lower: 0.0, upper: 0.0, witness: Some(w), components: prog.f1.clone() });
    }
    let mut rng = RandomSource::new(0x6d61_6769_63);
    let mut best_w = vec![1.0 / k as f64; k];
    let mut best_v = prog.objective(&best_w);
    let scale = prog.f1.iter().chain([&0.0]).filter(|x| x.is_finite()).fold(0.0f64, |m, &x| m.max(x))
        + mu.iter().map(|x| x * x).sum::<f64>() / (2.0 * sigma * sigma);
    // Temperatures far above the objective's size drag every start onto a
    // vertex, where the chosen supergradient need not be an ascent direction.
    let tau0 = 0.1 * best_v.max(1e-12 * scale);
    const RESTARTS: usize = 20;
    const STAGES: usize = 30;
    const ITERS: usize = 500;
    for r in 0..RESTARTS {
        let mut w = match r {
            0 => vec![1.0 / k as f64; k],
            1 => {
                let mut e = vec![0.0; k];
                e[0] = 1.0;
                e
            }
            _ => dirichlet_one(k, &mut rng),
        };
        // The objective is concave; each stage maximizes its soft-min
        // smoothing, with the temperature shrinking geometrically.
        for stage in 0..STAGES {
            let tau = tau0 * 10f64.powf(-8.0 * stage as f64 / (STAGES - 1) as f64);
            let mut g = vec![0.0; k];
            let mut f = soft_objective(&prog, &w, tau, Some(&mut g));
            let mut step = 1.0 / scale;
            for _ in 0..ITERS {
                let mut moved = false;
                while step > 1e-14 / scale {
                    let cand = project_simplex(&w.iter().zip(&g).map(|(wi, gi)| wi + step * gi).collect::<Vec<_>>());
                    let lin: f64 = cand.iter().zip(&w).zip(&g).map(|((c, wi), gi)| (c - wi) * gi).sum();
                    let fc = soft_objective(&prog, &cand, tau, None);
                    if fc >= f + 1e-4 * lin && lin > 0.0 {
                        w = cand;
                        f = soft_objective(&prog, &w, tau, Some(&mut g));
                        step *= 2.0;
                        moved = true;
                        break;
                    }
                    step *= 0.5;
                }
                if !moved {
                    break;
                }
            }
            let v = prog.objective(&w);
            if v > best_v {
                best_v = v;
                best_w = w.clone();
            }
        }
    }
    let (w, v) = polish(&prog, best_w, best_v);
    let (w, v) = snap(&prog, w, v);
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::NonConvergence { best: v });
    }
    let t = 1.0 / v;
    Ok(BoundResult { lower: t, upper: t, witness: Some(w), components: prog.f1.clone() })
}

/// Pairwise mass transfers with shrinking step on the exact objective.
fn polish(prog: &MagicProgram, mut w: Vec<f64>, mut v: f64) -> (Vec<f64>, f64) {
    let k = w.len();
    let mut step: f64 = 0.05;
    while step > 1e-12 {
        let mut improved = false;
        for i in 0..k {
            for j in 0..k {
                if i == j || w[j] == 0.0 {
                    continue;
                }
                let d = step.min(w[j]);
                let mut c = w.clone();
                c[i] += d;
                c[j] -= d;
                let vc = prog.objective(&c);
                if vc > v {
                    w = c;
                    v = vc;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (w, v)
}

/// Zero out negligible weights when that does not lower the objective.
fn snap(prog: &MagicProgram, w: Vec<f64>, v: f64) -> (Vec<f64>, f64) {
    let mut c: Vec<f64> = w.iter().map(|&x| if x < 1e-6 { 0.0 } else { x }).collect();
    let s: f64 = c.iter().sum();
    c.iter_mut().for_each(|x| *x /= s);
    let vc = prog.objective(&c);
    if vc >= v * (1.0 - 1e-9) {
        (c, vc)
    } else {
        (w, v)
    }
}

/// Closed-form upper bound on `T*` for `phi(x) = 1/x` (1-based `a_star`).
pub fn magic_upper_corollary(a_star: usize, sigma_m: f64, k: usize) -> f64 {
    let a = a_star as f64;
    let f = if a_star < k { a * (a + 1.0) } else { a * (a - 1.0) };
    2.0 * sigma_m * sigma_m * f * f
}

/// Upper bound on the optimal expected queries of the noiseless magic chain
/// with `k` arms and `n` magic arms.
pub fn multi_magic_upper(k: usize, n: usize) -> Result<f64> {
    if n == 0 || n >= k {
        return Err(Error::DomainError(format!("need 1 <= n <= K-1, got n={n}, K={k}")));
    }
    let nf = n as f64;
    let mut v = 0.0;
    for r in 1..=(k - n) {
        let rf = r as f64;
        let a = rf / (nf - 1.0 + rf);
        let t = ((nf - 2.0) / 2.0).min(rf * (nf - 1.0 + rf) / (rf + 1.0));
        let b = 1.0 + (nf - 1.0) / (nf - 1.0 + rf) * t;
        v = b + a * v;
    }
    Ok(v.min(nf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_values() {
        assert_eq!(kl_bernoulli(0.3, 0.3).unwrap(), 0.0);
        assert!((kl_bernoulli(0.9, 0.1).unwrap() - 0.8 * 9f64.ln()).abs() < 1e-12);
        assert!(kl_bernoulli(0.0, 0.5).is_err());
        assert!((kl_bernoulli(0.9f32, 0.1).unwrap() - 1.757_780).abs() < 1e-5);
    }

    #[test]
    fn min_gap_example() {
        let b = min_gap_bounds(&[1.0, 0.5], 0.5, 0.4, 0.1).unwrap();
        let coef: f64 = 2.0 * (1.0 / 0.16 + 1.0 / 0.81);
        assert!((coef - 14.969).abs() < 1e-3);
        let kl: f64 = kl_bernoulli(0.9, 0.1).unwrap();
        assert!((b.upper - 2.0 * 0.25 * kl * coef).abs() < 1e-9);
        assert!(min_gap_bounds(&[1.0, 0.9], 0.5, 0.4, 0.1).is_err());
    }

    #[test]
    fn corollary_arithmetic() {
        assert_eq!(magic_upper_corollary(2, 1.0, 5), 72.0);
        assert_eq!(magic_upper_corollary(5, 1.0, 5), 2.0 * 400.0);
    }

    #[test]
    fn multi_magic_small() {
        assert!(multi_magic_upper(10, 1).unwrap() <= 1.0);
    }

    #[test]
    fn simplex_projection() {
        let p = project_simplex(&[0.5, 0.5, 0.5]);
        assert!(p.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-12));
        let p = project_simplex(&[2.0, 0.0]);
        assert_eq!(p, vec![1.0, 0.0]);
    }
}
