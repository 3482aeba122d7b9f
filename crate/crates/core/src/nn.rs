//! Compact causal transformer over packed variable-length sequences, with
//! hand-written backpropagation, an incremental key/value cache and Adam.

use serde::{Deserialize, Serialize};

use crate::rng::RandomSource;
use crate::scalar::{linear_bwd_input, linear_bwd_weight, linear_fwd, Scalar};

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_in: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub d_out: usize,
}

impl ModelConfig {
    /// Desk-scale default: width 64, two blocks, two heads, 4x feedforward.
    pub fn small(d_in: usize, d_out: usize, max_len: usize) -> Self {
        Self { d_in, d_model: 64, n_layers: 2, n_heads: 2, d_ff: 256, max_len, d_out }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct LayerOffsets {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    emb_w: usize,
    emb_b: usize,
    pos: usize,
    layers: Vec<LayerOffsets>,
    lnf_g: usize,
    lnf_b: usize,
    head_w: usize,
    head_b: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(c: &ModelConfig) -> Self {
        let d = c.d_model;
        let mut n = 0;
        let mut take = |len: usize| {
            let o = n;
            n += len;
            o
        };
        let emb_w = take(d * c.d_in);
        let emb_b = take(d);
        let pos = take(c.max_len * d);
        let layers = (0..c.n_layers)
            .map(|_| LayerOffsets {
                ln1_g: take(d),
                ln1_b: take(d),
                wq: take(d * d),
                wk: take(d * d),
                wv: take(d * d),
                wo: take(d * d),
                bo: take(d),
                ln2_g: take(d),
                ln2_b: take(d),
                w1: take(c.d_ff * d),
                b1: take(c.d_ff),
                w2: take(d * c.d_ff),
                b2: take(d),
            })
            .collect();
        let lnf_g = take(d);
        let lnf_b = take(d);
        let head_w = take(c.d_out * d);
        let head_b = take(c.d_out);
        Self { emb_w, emb_b, pos, layers, lnf_g, lnf_b, head_w, head_b, total: n }
    }
}

/// Variable-length token sequences packed row-wise.
#[derive(Clone, Debug, Default)]
pub struct SeqBatch<S> {
    pub d_in: usize,
    pub x: Vec<S>,
    pub starts: Vec<usize>,
    pub lens: Vec<usize>,
}

impl<S: Scalar> SeqBatch<S> {
    pub fn new(d_in: usize) -> Self {
        Self { d_in, x: Vec::new(), starts: Vec::new(), lens: Vec::new() }
    }

    /// Append one sequence of `tokens.len() / d_in` rows.
    pub fn push(&mut self, tokens: &[S]) {
        assert_eq!(tokens.len() % self.d_in, 0);
        self.starts.push(self.rows());
        self.lens.push(tokens.len() / self.d_in);
        self.x.extend_from_slice(tokens);
    }

    pub fn rows(&self) -> usize {
        self.x.len() / self.d_in.max(1)
    }

    pub fn n_seqs(&self) -> usize {
        self.lens.len()
    }
}

#[inline]
fn gelu<S: Scalar>(x: S) -> S {
    let c = S::of(0.797_884_560_802_865_4);
    let half = S::of(0.5);
    half * x * (S::one() + (c * (x + S::of(0.044715) * x * x * x)).tanh())
}

#[inline]
fn gelu_grad<S: Scalar>(x: S) -> S {
    let c = S::of(0.797_884_560_802_865_4);
    let a = S::of(0.044715);
    let half = S::of(0.5);
    let th = (c * (x + a * x * x * x)).tanh();
    half * (S::one() + th) + half * x * (S::one() - th * th) * c * (S::one() + S::of(3.0) * a * x * x)
}

#[derive(Clone, Debug, Default)]
struct LnCache<S> {
    xhat: Vec<S>,
    rstd: Vec<S>,
}

fn ln_fwd<S: Scalar>(x: &[S], g: &[S], b: &[S], rows: usize, d: usize) -> (Vec<S>, LnCache<S>) {
    let mut y = vec![S::zero(); rows * d];
    let mut xhat = vec![S::zero(); rows * d];
    let mut rstd = vec![S::zero(); rows];
    let dn = S::of_usize(d);
    let eps = S::of(LN_EPS);
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mu = xr.iter().copied().sum::<S>() / dn;
        let var = xr.iter().map(|&v| (v - mu) * (v - mu)).sum::<S>() / dn;
        let rs = S::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let xh = (xr[j] - mu) * rs;
            xhat[r * d + j] = xh;
            y[r * d + j] = g[j] * xh + b[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Accumulates into `dx`, `dg`, `db`.
fn ln_bwd<S: Scalar>(dy: &[S], c: &LnCache<S>, g: &[S], rows: usize, d: usize, dx: &mut [S], dg: &mut [S], db: &mut [S]) {
    let dn = S::of_usize(d);
    let mut dxh = vec![S::zero(); d];
    for r in 0..rows {
        let xh = &c.xhat[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let mut m1 = S::zero();
        let mut m2 = S::zero();
        for j in 0..d {
            dg[j] += dyr[j] * xh[j];
            db[j] += dyr[j];
            dxh[j] = dyr[j] * g[j];
            m1 += dxh[j];
            m2 += dxh[j] * xh[j];
        }
        m1 /= dn;
        m2 /= dn;
        for j in 0..d {
            dx[r * d + j] += c.rstd[r] * (dxh[j] - m1 - xh[j] * m2);
        }
    }
}

fn add_bias<S: Scalar>(y: &mut [S], b: &[S]) {
    for row in y.chunks_mut(b.len()) {
        for (v, &bb) in row.iter_mut().zip(b) {
            *v += bb;
        }
    }
}

fn bias_grad<S: Scalar>(dy: &[S], db: &mut [S]) {
    for row in dy.chunks(db.len()) {
        for (g, &v) in db.iter_mut().zip(row) {
            *g += v;
        }
    }
}

#[derive(Clone, Debug, Default)]
struct LayerCache<S> {
    ln1: LnCache<S>,
    a: Vec<S>,
    q: Vec<S>,
    k: Vec<S>,
    v: Vec<S>,
    p: Vec<S>,
    att: Vec<S>,
    ln2: LnCache<S>,
    f: Vec<S>,
    u: Vec<S>,
    g: Vec<S>,
}

/// Activations retained for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct Cache<S> {
    rows: usize,
    starts: Vec<usize>,
    lens: Vec<usize>,
    p_off: Vec<usize>,
    x: Vec<S>,
    e_pre: Vec<S>,
    layers: Vec<LayerCache<S>>,
    lnf: LnCache<S>,
    z: Vec<S>,
}

/// Causal transformer with a linear head at every position.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceModel<S> {
    pub cfg: ModelConfig,
    layout: Layout,
    pub params: Vec<S>,
}

/// Key/value cache of one sequence for incremental decoding.
#[derive(Clone, Debug, Default)]
pub struct KvState<S> {
    k: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    pub len: usize,
}

impl<S: Scalar> SequenceModel<S> {
    pub fn new(cfg: ModelConfig, rng: &mut RandomSource) -> Self {
        assert!(cfg.d_model % cfg.n_heads == 0, "width must split evenly across heads");
        let layout = Layout::new(&cfg);
        let mut p = vec![S::zero(); layout.total];
        let d = cfg.d_model;
        let depth = (2.0 * cfg.n_layers.max(1) as f64).sqrt();
        let mut fill = |off: usize, len: usize, sd: f64, p: &mut Vec<S>| {
            for v in &mut p[off..off + len] {
                *v = S::of(rng.normal(0.0, sd));
            }
        };
        fill(layout.emb_w, d * cfg.d_in, 1.0 / (cfg.d_in as f64).sqrt(), &mut p);
        fill(layout.pos, cfg.max_len * d, 0.1, &mut p);
        for l in &layout.layers {
            for w in [l.wq, l.wk, l.wv] {
                fill(w, d * d, 1.0 / (d as f64).sqrt(), &mut p);
            }
            fill(l.wo, d * d, 1.0 / (d as f64).sqrt() / depth, &mut p);
            fill(l.w1, cfg.d_ff * d, 1.0 / (d as f64).sqrt(), &mut p);
            fill(l.w2, d * cfg.d_ff, 1.0 / (cfg.d_ff as f64).sqrt() / depth, &mut p);
            p[l.ln1_g..l.ln1_g + d].iter_mut().for_each(|v| *v = S::one());
            p[l.ln2_g..l.ln2_g + d].iter_mut().for_each(|v| *v = S::one());
        }
        p[layout.lnf_g..layout.lnf_g + d].iter_mut().for_each(|v| *v = S::one());
        fill(layout.head_w, cfg.d_out * d, 0.1 / (d as f64).sqrt(), &mut p);
        Self { cfg, layout, params: p }
    }

    /// Rebuild from a stored parameter vector; `None` if the length mismatches.
    pub fn from_params(cfg: ModelConfig, params: Vec<S>) -> Option<Self> {
        let layout = Layout::new(&cfg);
        (params.len() == layout.total).then_some(Self { cfg, layout, params })
    }

    pub fn n_params(&self) -> usize {
        self.layout.total
    }

    /// Output-head bias, one entry per output.
    pub fn head_bias_mut(&mut self) -> &mut [S] {
        let o = self.layout.head_b;
        &mut self.params[o..o + self.cfg.d_out]
    }

    fn w(&self, off: usize, len: usize) -> &[S] {
        &self.params[off..off + len]
    }

    /// Outputs at every row of `batch`, `rows x d_out`.
    pub fn forward(&self, batch: &SeqBatch<S>) -> (Vec<S>, Cache<S>) {
        let c = &self.cfg;
        let (d, rows) = (c.d_model, batch.rows());
        assert_eq!(batch.d_in, c.d_in);
        assert!(batch.lens.iter().all(|&t| t <= c.max_len), "sequence longer than the positional table");
        let lay = &self.layout;
        let mut e_pre = vec![S::zero(); rows * d];
        linear_fwd(&batch.x, self.w(lay.emb_w, d * c.d_in), rows, c.d_in, d, S::zero(), &mut e_pre);
        add_bias(&mut e_pre, self.w(lay.emb_b, d));
        let mut h: Vec<S> = e_pre.iter().map(|&v| gelu(v)).collect();
        for (&s, &t) in batch.starts.iter().zip(&batch.lens) {
            for i in 0..t {
                let pe = &self.params[lay.pos + i * d..lay.pos + (i + 1) * d];
                for (hv, &pv) in h[(s + i) * d..(s + i + 1) * d].iter_mut().zip(pe) {
                    *hv += pv;
                }
            }
        }
        let mut p_off = Vec::with_capacity(batch.n_seqs() + 1);
        let mut acc = 0;
        for &t in &batch.lens {
            p_off.push(acc);
            acc += c.n_heads * t * t;
        }
        p_off.push(acc);
        let mut layers = Vec::with_capacity(c.n_layers);
        for l in &lay.layers {
            let (lc, h_out) = self.block_fwd(l, h, rows, &batch.starts, &batch.lens, &p_off);
            layers.push(lc);
            h = h_out;
        }
        let (z, lnf) = ln_fwd(&h, self.w(lay.lnf_g, d), self.w(lay.lnf_b, d), rows, d);
        let mut out = vec![S::zero(); rows * c.d_out];
        linear_fwd(&z, self.w(lay.head_w, c.d_out * d), rows, d, c.d_out, S::zero(), &mut out);
        add_bias(&mut out, self.w(lay.head_b, c.d_out));
        let cache = Cache {
            rows,
            starts: batch.starts.clone(),
            lens: batch.lens.clone(),
            p_off,
            x: batch.x.clone(),
            e_pre,
            layers,
            lnf,
            z,
        };
        (out, cache)
    }

    fn block_fwd(
        &self,
        l: &LayerOffsets,
        h_in: Vec<S>,
        rows: usize,
        starts: &[usize],
        lens: &[usize],
        p_off: &[usize],
    ) -> (LayerCache<S>, Vec<S>) {
        let c = &self.cfg;
        let (d, nh, dh) = (c.d_model, c.n_heads, c.head_dim());
        let (a, ln1) = ln_fwd(&h_in, self.w(l.ln1_g, d), self.w(l.ln1_b, d), rows, d);
        let mut q = vec![S::zero(); rows * d];
        let mut k = vec![S::zero(); rows * d];
        let mut v = vec![S::zero(); rows * d];
        linear_fwd(&a, self.w(l.wq, d * d), rows, d, d, S::zero(), &mut q);
        linear_fwd(&a, self.w(l.wk, d * d), rows, d, d, S::zero(), &mut k);
        linear_fwd(&a, self.w(l.wv, d * d), rows, d, d, S::zero(), &mut v);
        let mut p = vec![S::zero(); *p_off.last().unwrap()];
        let mut att = vec![S::zero(); rows * d];
        let scale = S::one() / S::of_usize(dh).sqrt();
        for (si, (&s, &t)) in starts.iter().zip(lens).enumerate() {
            for hd in 0..nh {
                let pb = p_off[si] + hd * t * t;
                for i in 0..t {
                    let qi = &q[(s + i) * d + hd * dh..(s + i) * d + (hd + 1) * dh];
                    let pr = &mut p[pb + i * t..pb + i * t + t];
                    let mut mx = S::neg_infinity();
                    for j in 0..=i {
                        let kj = &k[(s + j) * d + hd * dh..(s + j) * d + (hd + 1) * dh];
                        let sc = qi.iter().zip(kj).map(|(&x, &y)| x * y).sum::<S>() * scale;
                        pr[j] = sc;
                        mx = mx.max(sc);
                    }
                    let mut z = S::zero();
                    for pj in pr.iter_mut().take(i + 1) {
                        *pj = (*pj - mx).exp();
                        z += *pj;
                    }
                    let out = &mut att[(s + i) * d + hd * dh..(s + i) * d + (hd + 1) * dh];
                    for j in 0..=i {
                        pr[j] /= z;
                        let vj = &v[(s + j) * d + hd * dh..(s + j) * d + (hd + 1) * dh];
                        for (o, &vv) in out.iter_mut().zip(vj) {
                            *o += pr[j] * vv;
                        }
                    }
                }
            }
        }
        let mut h_mid = h_in;
        linear_fwd(&att, self.w(l.wo, d * d), rows, d, d, S::one(), &mut h_mid);
        add_bias(&mut h_mid, self.w(l.bo, d));
        let (f, ln2) = ln_fwd(&h_mid, self.w(l.ln2_g, d), self.w(l.ln2_b, d), rows, d);
        let mut u = vec![S::zero(); rows * c.d_ff];
        linear_fwd(&f, self.w(l.w1, c.d_ff * d), rows, d, c.d_ff, S::zero(), &mut u);
        add_bias(&mut u, self.w(l.b1, c.d_ff));
        let g: Vec<S> = u.iter().map(|&x| gelu(x)).collect();
        let mut h_out = h_mid;
        linear_fwd(&g, self.w(l.w2, d * c.d_ff), rows, c.d_ff, d, S::one(), &mut h_out);
        add_bias(&mut h_out, self.w(l.b2, d));
        (LayerCache { ln1, a, q, k, v, p, att, ln2, f, u, g }, h_out)
    }

    /// Parameter gradient for upstream `d_out` (`rows x d_out`).
    pub fn backward(&self, cache: &Cache<S>, d_out: &[S]) -> Vec<S> {
        let c = &self.cfg;
        let lay = &self.layout;
        let (d, rows) = (c.d_model, cache.rows);
        let mut gr = vec![S::zero(); lay.total];
        {
            let (gw, rest) = gr[lay.head_w..].split_at_mut(c.d_out * d);
            linear_bwd_weight(d_out, &cache.z, rows, d, c.d_out, gw);
            bias_grad(d_out, &mut rest[lay.head_b - lay.head_w - c.d_out * d..][..c.d_out]);
        }
        let mut dz = vec![S::zero(); rows * d];
        linear_bwd_input(d_out, self.w(lay.head_w, c.d_out * d), rows, d, c.d_out, &mut dz);
        let mut dh = vec![S::zero(); rows * d];
        {
            let (dg, db) = split2(&mut gr, lay.lnf_g, lay.lnf_b, d);
            ln_bwd(&dz, &cache.lnf, self.w(lay.lnf_g, d), rows, d, &mut dh, dg, db);
        }
        for (l, lc) in lay.layers.iter().zip(&cache.layers).rev() {
            dh = self.block_bwd(l, lc, dh, cache, &mut gr);
        }
        let de: Vec<S> = dh.iter().zip(&cache.e_pre).map(|(&g, &x)| g * gelu_grad(x)).collect();
        for (&s, &t) in cache.starts.iter().zip(&cache.lens) {
            for i in 0..t {
                for j in 0..d {
                    gr[lay.pos + i * d + j] += dh[(s + i) * d + j];
                }
            }
        }
        linear_bwd_weight(&de, &cache.x, rows, c.d_in, d, &mut gr[lay.emb_w..lay.emb_w + d * c.d_in]);
        bias_grad(&de, &mut gr[lay.emb_b..lay.emb_b + d]);
        gr
    }

    fn block_bwd(&self, l: &LayerOffsets, lc: &LayerCache<S>, dh_out: Vec<S>, cache: &Cache<S>, gr: &mut [S]) -> Vec<S> {
        let c = &self.cfg;
        let (d, nh, dh_) = (c.d_model, c.n_heads, c.head_dim());
        let rows = cache.rows;
        linear_bwd_weight(&dh_out, &lc.g, rows, c.d_ff, d, &mut gr[l.w2..l.w2 + d * c.d_ff]);
        bias_grad(&dh_out, &mut gr[l.b2..l.b2 + d]);
        let mut dg = vec![S::zero(); rows * c.d_ff];
        linear_bwd_input(&dh_out, self.w(l.w2, d * c.d_ff), rows, c.d_ff, d, &mut dg);
        for (g, &u) in dg.iter_mut().zip(&lc.u) {
            *g *= gelu_grad(u);
        }
        linear_bwd_weight(&dg, &lc.f, rows, d, c.d_ff, &mut gr[l.w1..l.w1 + c.d_ff * d]);
        bias_grad(&dg, &mut gr[l.b1..l.b1 + c.d_ff]);
        let mut df = vec![S::zero(); rows * d];
        linear_bwd_input(&dg, self.w(l.w1, c.d_ff * d), rows, d, c.d_ff, &mut df);
        let mut dh_mid = dh_out;
        {
            let (dgm, dbm) = split2(gr, l.ln2_g, l.ln2_b, d);
            ln_bwd(&df, &lc.ln2, self.w(l.ln2_g, d), rows, d, &mut dh_mid, dgm, dbm);
        }
        linear_bwd_weight(&dh_mid, &lc.att, rows, d, d, &mut gr[l.wo..l.wo + d * d]);
        bias_grad(&dh_mid, &mut gr[l.bo..l.bo + d]);
        let mut datt = vec![S::zero(); rows * d];
        linear_bwd_input(&dh_mid, self.w(l.wo, d * d), rows, d, d, &mut datt);
        let mut dq = vec![S::zero(); rows * d];
        let mut dk = vec![S::zero(); rows * d];
        let mut dv = vec![S::zero(); rows * d];
        let scale = S::one() / S::of_usize(dh_).sqrt();
        let mut dp = Vec::new();
        for (si, (&s, &t)) in cache.starts.iter().zip(&cache.lens).enumerate() {
            for hd in 0..nh {
                let pb = cache.p_off[si] + hd * t * t;
                let cols = hd * dh_..(hd + 1) * dh_;
                for i in 0..t {
                    let pr = &lc.p[pb + i * t..pb + i * t + t];
                    let da = &datt[(s + i) * d..(s + i + 1) * d][cols.clone()];
                    dp.clear();
                    let mut dot = S::zero();
                    for j in 0..=i {
                        let vj = &lc.v[(s + j) * d..(s + j + 1) * d][cols.clone()];
                        let g = da.iter().zip(vj).map(|(&x, &y)| x * y).sum::<S>();
                        dp.push(g);
                        dot += pr[j] * g;
                        let dvj = &mut dv[(s + j) * d..(s + j + 1) * d][cols.clone()];
                        for (o, &x) in dvj.iter_mut().zip(da) {
                            *o += pr[j] * x;
                        }
                    }
                    for j in 0..=i {
                        let ds = pr[j] * (dp[j] - dot) * scale;
                        if ds == S::zero() {
                            continue;
                        }
                        for col in cols.clone() {
                            dq[(s + i) * d + col] += ds * lc.k[(s + j) * d + col];
                            dk[(s + j) * d + col] += ds * lc.q[(s + i) * d + col];
                        }
                    }
                }
            }
        }
        let mut da = vec![S::zero(); rows * d];
        for (w, dm) in [(l.wq, &dq), (l.wk, &dk), (l.wv, &dv)] {
            linear_bwd_weight(dm, &lc.a, rows, d, d, &mut gr[w..w + d * d]);
            linear_bwd_input(dm, self.w(w, d * d), rows, d, d, &mut da);
        }
        let mut dh_in = dh_mid;
        let (dg1, db1) = split2(gr, l.ln1_g, l.ln1_b, d);
        ln_bwd(&da, &lc.ln1, self.w(l.ln1_g, d), rows, d, &mut dh_in, dg1, db1);
        dh_in
    }

    pub fn start(&self) -> KvState<S> {
        KvState { k: vec![Vec::new(); self.cfg.n_layers], v: vec![Vec::new(); self.cfg.n_layers], len: 0 }
    }

    /// Feed one token and return the output at its position.
    pub fn step(&self, st: &mut KvState<S>, token: &[S]) -> Vec<S> {
        self.step_many(&mut [st], token)
    }

    /// Feed one token to each of several sequences at once (row `i` of
    /// `tokens` extends `states[i]`); returns `states.len() x d_out` outputs.
    pub fn step_many(&self, states: &mut [&mut KvState<S>], tokens: &[S]) -> Vec<S> {
        let c = &self.cfg;
        let lay = &self.layout;
        let (d, nh, dh, n) = (c.d_model, c.n_heads, c.head_dim(), states.len());
        assert_eq!(tokens.len(), n * c.d_in);
        let mut h = vec![S::zero(); n * d];
        linear_fwd(tokens, self.w(lay.emb_w, d * c.d_in), n, c.d_in, d, S::zero(), &mut h);
        add_bias(&mut h, self.w(lay.emb_b, d));
        for (r, st) in states.iter().enumerate() {
            assert!(st.len < c.max_len, "sequence longer than the positional table");
            let pe = &self.params[lay.pos + st.len * d..lay.pos + (st.len + 1) * d];
            for (v, &p) in h[r * d..(r + 1) * d].iter_mut().zip(pe) {
                *v = gelu(*v) + p;
            }
        }
        let scale = S::one() / S::of_usize(dh).sqrt();
        let mut sc = Vec::new();
        for (li, l) in lay.layers.iter().enumerate() {
            let (a, _) = ln_fwd(&h, self.w(l.ln1_g, d), self.w(l.ln1_b, d), n, d);
            let mut q = vec![S::zero(); n * d];
            let mut k = vec![S::zero(); n * d];
            let mut v = vec![S::zero(); n * d];
            linear_fwd(&a, self.w(l.wq, d * d), n, d, d, S::zero(), &mut q);
            linear_fwd(&a, self.w(l.wk, d * d), n, d, d, S::zero(), &mut k);
            linear_fwd(&a, self.w(l.wv, d * d), n, d, d, S::zero(), &mut v);
            let mut att = vec![S::zero(); n * d];
            for (r, st) in states.iter_mut().enumerate() {
                st.k[li].extend_from_slice(&k[r * d..(r + 1) * d]);
                st.v[li].extend_from_slice(&v[r * d..(r + 1) * d]);
                let (kc, vc) = (&st.k[li], &st.v[li]);
                let t = st.len + 1;
                for hd in 0..nh {
                    let cols = hd * dh..(hd + 1) * dh;
                    let qr = &q[r * d..(r + 1) * d][cols.clone()];
                    sc.clear();
                    let mut mx = S::neg_infinity();
                    for j in 0..t {
                        let s = qr.iter().zip(&kc[j * d..(j + 1) * d][cols.clone()]).map(|(&x, &y)| x * y).sum::<S>() * scale;
                        mx = mx.max(s);
                        sc.push(s);
                    }
                    let mut z = S::zero();
                    for s in sc.iter_mut() {
                        *s = (*s - mx).exp();
                        z += *s;
                    }
                    let out = &mut att[r * d..(r + 1) * d];
                    for (j, &s) in sc.iter().enumerate() {
                        let w = s / z;
                        for col in cols.clone() {
                            out[col] += w * vc[j * d + col];
                        }
                    }
                }
            }
            linear_fwd(&att, self.w(l.wo, d * d), n, d, d, S::one(), &mut h);
            add_bias(&mut h, self.w(l.bo, d));
            let (f, _) = ln_fwd(&h, self.w(l.ln2_g, d), self.w(l.ln2_b, d), n, d);
            let mut u = vec![S::zero(); n * c.d_ff];
            linear_fwd(&f, self.w(l.w1, c.d_ff * d), n, d, c.d_ff, S::zero(), &mut u);
            add_bias(&mut u, self.w(l.b1, c.d_ff));
            let g: Vec<S> = u.iter().map(|&x| gelu(x)).collect();
            linear_fwd(&g, self.w(l.w2, d * c.d_ff), n, c.d_ff, d, S::one(), &mut h);
            add_bias(&mut h, self.w(l.b2, d));
        }
        for st in states.iter_mut() {
            st.len += 1;
        }
        let (z, _) = ln_fwd(&h, self.w(lay.lnf_g, d), self.w(lay.lnf_b, d), n, d);
        let mut out = vec![S::zero(); n * c.d_out];
        linear_fwd(&z, self.w(lay.head_w, c.d_out * d), n, d, c.d_out, S::zero(), &mut out);
        add_bias(&mut out, self.w(lay.head_b, c.d_out));
        out
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }
}

/// Two disjoint mutable `len`-slices of `v` starting at `a < b`.
fn split2<S>(v: &mut [S], a: usize, b: usize, len: usize) -> (&mut [S], &mut [S]) {
    debug_assert!(a + len <= b);
    let (x, y) = v.split_at_mut(b);
    (&mut x[a..a + len], &mut y[..len])
}

/// Row-wise log-softmax.
pub fn log_softmax<S: Scalar>(x: &[S], width: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(width) {
        let mx = row.iter().copied().fold(S::neg_infinity(), S::max);
        let lz = row.iter().map(|&v| (v - mx).exp()).sum::<S>().ln() + mx;
        out.extend(row.iter().map(|&v| v - lz));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip.
    pub clip: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip: Some(1.0) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<S> {
    pub cfg: AdamConfig,
    pub m: Vec<S>,
    pub v: Vec<S>,
    pub t: u64,
}

impl<S: Scalar> Adam<S> {
    pub fn new(cfg: AdamConfig, n: usize) -> Self {
        Self { cfg, m: vec![S::zero(); n], v: vec![S::zero(); n], t: 0 }
    }

    /// One update; returns the pre-clip gradient norm.
    pub fn step(&mut self, params: &mut [S], grad: &[S]) -> f64 {
        let norm = grad.iter().map(|g| g.f64() * g.f64()).sum::<f64>().sqrt();
        let scale = match self.cfg.clip {
            Some(c) if norm > c => S::of(c / norm),
            _ => S::one(),
        };
        self.t += 1;
        let (b1, b2) = (S::of(self.cfg.beta1), S::of(self.cfg.beta2));
        let bc1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        let step = S::of(self.cfg.lr * bc2.sqrt() / bc1);
        let eps = S::of(self.cfg.eps * bc2.sqrt());
        for i in 0..params.len() {
            let g = grad[i] * scale;
            self.m[i] = b1 * self.m[i] + (S::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (S::one() - b2) * g * g;
            params[i] -= step * self.m[i] / (self.v[i].sqrt() + eps);
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SequenceModel<f64> {
        let cfg = ModelConfig { d_in: 3, d_model: 8, n_layers: 2, n_heads: 2, d_ff: 16, max_len: 6, d_out: 4 };
        let mut m = SequenceModel::new(cfg, &mut RandomSource::new(3));
        let mut r = RandomSource::new(4);
        for p in &mut m.params {
            *p += r.normal(0.0, 0.05);
        }
        m
    }

    fn batch(r: &mut RandomSource, lens: &[usize]) -> SeqBatch<f64> {
        let mut b = SeqBatch::new(3);
        for &t in lens {
            let toks: Vec<f64> = (0..t * 3).map(|_| r.normal(0.0, 1.0)).collect();
            b.push(&toks);
        }
        b
    }

    #[test]
    fn incremental_matches_full() {
        let m = tiny();
        let mut r = RandomSource::new(9);
        let b = batch(&mut r, &[5]);
        let (full, _) = m.forward(&b);
        let mut st = m.start();
        for i in 0..5 {
            let o = m.step(&mut st, &b.x[i * 3..(i + 1) * 3]);
            for j in 0..4 {
                assert!((o[j] - full[i * 4 + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lockstep_matches_full() {
        let m = tiny();
        let mut r = RandomSource::new(5);
        let b = batch(&mut r, &[4, 4]);
        let (full, _) = m.forward(&b);
        let (mut s0, mut s1) = (m.start(), m.start());
        for i in 0..4 {
            let mut toks = b.x[i * 3..(i + 1) * 3].to_vec();
            toks.extend_from_slice(&b.x[(4 + i) * 3..(5 + i) * 3]);
            let o = m.step_many(&mut [&mut s0, &mut s1], &toks);
            for j in 0..4 {
                assert!((o[j] - full[i * 4 + j]).abs() < 1e-12);
                assert!((o[4 + j] - full[(4 + i) * 4 + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut m = tiny();
        let mut r = RandomSource::new(11);
        let b = batch(&mut r, &[4, 2, 6]);
        let w: Vec<f64> = (0..b.rows() * 4).map(|_| r.normal(0.0, 1.0)).collect();
        let loss = |m: &SequenceModel<f64>| m.forward(&b).0.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let (_, cache) = m.forward(&b);
        let g = m.backward(&cache, &w);
        for _ in 0..60 {
            let i = r.below(m.n_params());
            let h = 1e-5;
            let orig = m.params[i];
            m.params[i] = orig + h;
            let lp = loss(&m);
            m.params[i] = orig - h;
            let lm = loss(&m);
            m.params[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 + 1e-4 * fd.abs().max(g[i].abs()), "coord {i}: fd {fd} vs {}", g[i]);
        }
    }
}
