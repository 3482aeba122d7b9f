//! Numeric oracles for the magic-action bounds.

use icpe::envs::Phi;
use icpe::rng::RandomSource;

/// Inner infimum for alternative `a`, as a one-dimensional convex problem in
/// the common level `m` of the arms the alternative must lift `a` above.
pub fn inner_oracle(mu: &[f64], sigma: f64, f1: f64, w: &[f64], a: usize, floor: f64) -> f64 {
    let k = mu.len();
    let f = |m: f64| {
        let mut v = w[a] * (mu[a] - m).powi(2);
        for b in 1..k {
            if b != a {
                v += w[b] * (mu[b] - m).max(0.0).powi(2);
            }
        }
        v / (2.0 * sigma * sigma)
    };
    let hi = mu[1..].iter().cloned().fold(floor, f64::max);
    let (mut lo, mut up) = (floor, hi);
    for _ in 0..200 {
        let (x1, x2) = (lo + (up - lo) / 3.0, up - (up - lo) / 3.0);
        if f(x1) <= f(x2) {
            up = x2;
        } else {
            lo = x1;
        }
    }
    w[0] * f1 + f(0.5 * (lo + up)).min(f(floor))
}

pub struct Oracle {
    mu: Vec<f64>,
    sigma: f64,
    f1: Vec<f64>,
    alts: Vec<usize>,
    floor: f64,
}

impl Oracle {
    pub fn new(mu: &[f64], sigma: f64, sigma_m: f64, phi: Phi) -> Self {
        let k = mu.len();
        let a_star = (1..k).max_by(|&x, &y| mu[x].partial_cmp(&mu[y]).unwrap()).unwrap();
        let floor = (2..=k).map(|i| phi.eval(i, k)).fold(f64::NEG_INFINITY, f64::max);
        let fa = phi.eval(a_star + 1, k);
        let f1 = (0..k).map(|a| (fa - phi.eval(a + 1, k)).powi(2) / (2.0 * sigma_m * sigma_m)).collect();
        let alts = (1..k).filter(|&a| a != a_star).collect();
        Self { mu: mu.to_vec(), sigma, f1, alts, floor }
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        self.alts
            .iter()
            .map(|&a| inner_oracle(&self.mu, self.sigma, self.f1[a], w, a, self.floor))
            .fold(f64::INFINITY, f64::min)
    }

    /// Best of random simplex draws, then random local moves around the incumbent.
    pub fn search(&self, draws: usize, rng: &mut RandomSource) -> (f64, Vec<f64>) {
        let k = self.mu.len();
        // Uniform on a random face, so vertices and edges carry mass too.
        let simplex = |rng: &mut RandomSource| {
            let size = 1 + rng.below(k);
            let mut idx: Vec<usize> = (0..k).collect();
            for i in (1..k).rev() {
                idx.swap(i, rng.below(i + 1));
            }
            let mut e = vec![0.0; k];
            for &i in &idx[..size] {
                e[i] = -rng.uniform().max(1e-300).ln();
            }
            let s: f64 = e.iter().sum();
            e.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let mut best_w = simplex(rng);
        let mut best = self.value(&best_w);
        for _ in 0..draws / 2 {
            let w = simplex(rng);
            let v = self.value(&w);
            if v > best {
                best = v;
                best_w = w;
            }
        }
        // Local stage: random mixtures, tangent steps and face drops, with an
        // adaptive radius.
        let mut radius: f64 = 0.2;
        for i in 0..draws / 2 {
            let w: Vec<f64> = if i % 4 == 3 {
                // Shrink one coordinate, half the time onto the opposite face.
                let j = rng.below(k);
                let mut w = best_w.clone();
                let keep = if rng.bernoulli(0.5) { 0.0 } else { rng.uniform() };
                let rest = 1.0 - w[j] * (1.0 - keep);
                if rest <= 0.0 {
                    continue;
                }
                w[j] *= keep;
                w.iter_mut().for_each(|x| *x /= rest);
                w
            } else if i % 2 == 0 {
                let d = simplex(rng);
                best_w.iter().zip(&d).map(|(b, x)| (1.0 - radius) * b + radius * x).collect()
            } else {
                // Some tangent steps stay on the incumbent's face.
                let face = i % 8 == 1;
                let live: Vec<bool> = best_w.iter().map(|&b| !face || b > 0.0).collect();
                let g: Vec<f64> = live.iter().map(|&l| if l { rng.std_normal() } else { 0.0 }).collect();
                let mean = g.iter().sum::<f64>() / live.iter().filter(|&&l| l).count() as f64;
                let mut w: Vec<f64> = (0..k)
                    .map(|j| if live[j] { (best_w[j] + radius * (g[j] - mean)).max(0.0) } else { 0.0 })
                    .collect();
                let s: f64 = w.iter().sum();
                w.iter_mut().for_each(|x| *x /= s);
                w
            };
            let v = self.value(&w);
            if v > best {
                best = v;
                best_w = w;
                radius = (radius * 1.5).min(0.5);
            } else {
                radius = (radius * 0.997).max(1e-7);
            }
        }
        (best, best_w)
    }
}

pub fn random_instance(k: usize, rng: &mut RandomSource) -> Vec<f64> {
    loop {
        let mut mu = vec![0.0];
        mu.extend((1..k).map(|_| rng.uniform_in(0.0, 1.2)));
        let top = mu[1..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let n_top = mu[1..].iter().filter(|&&x| x == top).count();
        if top > 0.55 && n_top == 1 {
            return mu;
        }
    }
}

/// Direct evaluation of the closed-form sum.
pub fn multi_magic_closed(k: usize, n: usize) -> f64 {
    let nf = n as f64;
    let mut total = 0.0;
    for j in 1..=(k - n) {
        let jf = j as f64;
        let prod: f64 = ((j + 1)..=(k - n)).map(|i| i as f64 / (nf - 1.0 + i as f64)).product();
        let inner = ((nf - 2.0) / 2.0).min(jf * (nf - 1.0 + jf) / (jf + 1.0));
        total += prod * (1.0 + (nf - 1.0) / (nf - 1.0 + jf) * inner);
    }
    total.min(nf)
}

