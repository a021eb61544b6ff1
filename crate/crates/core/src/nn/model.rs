//! Dilated-convolution encoder, classifier head, and their exact gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{bce, ntxent, sigmoid};
use super::real::{gemm, Real};
use crate::bits::Window;
use crate::error::{Error, Result};
use crate::layer::Layer;
use crate::seed::derive_seed;

/// Windows per unit of parallel work. Fixed so that reductions happen in the
/// same order whatever the thread count.
pub const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Input length in bits.
    pub t: usize,
    /// Channel width.
    pub c: usize,
    /// Number of convolution layers.
    pub layers: usize,
    /// Kernel size.
    pub k: usize,
    pub dilations: Vec<usize>,
    /// Output dimension.
    pub d: usize,
}

impl EncoderConfig {
    /// Ten layers, kernel 3, dilations 1, 2, 4, ... 512, width and output 64.
    pub fn new(t: usize) -> Self {
        Self::with_dims(t, 64, 10, 3, 64)
    }

    pub fn for_layer(layer: Layer) -> Self {
        Self::new(layer.window_bits())
    }

    /// Dilations default to powers of two.
    pub fn with_dims(t: usize, c: usize, layers: usize, k: usize, d: usize) -> Self {
        Self {
            t,
            c,
            layers,
            k,
            dilations: (0..layers).map(|l| 1usize << l.min(30)).collect(),
            d,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.c == 0 || self.layers == 0 || self.k == 0 || self.d == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.dilations.len() != self.layers {
            return Err(Error::Config(format!(
                "{} dilations for {} layers",
                self.dilations.len(),
                self.layers
            )));
        }
        if self.dilations.contains(&0) {
            return Err(Error::Config("dilation 0".into()));
        }
        Ok(())
    }
}

/// Uniform access to the tensors of a parameter set, in a fixed order.
pub trait Params<R: Real> {
    fn tensors(&self) -> Vec<&[R]>;
    fn tensors_mut(&mut self) -> Vec<&mut [R]>;

    fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(R::zero());
        }
        z
    }

    /// Element-wise `self += other`; both must share a shape.
    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x = *x + y;
            }
        }
    }
}

fn uniform<R: Real>(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<R> {
    (0..n).map(|_| R::lit(rng.gen_range(-bound..=bound))).collect()
}

/// Input lift plus the dilated convolution stack: everything frozen at fine-tune.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone<R> {
    pub cfg: EncoderConfig,
    /// Per-position lift 1 → C.
    pub w_in: Vec<R>,
    pub b_in: Vec<R>,
    /// One `(K·C) × C` matrix per layer; row `j·C + i` is tap `j`, input channel `i`.
    pub conv_w: Vec<Vec<R>>,
    pub conv_b: Vec<Vec<R>>,
}

/// Activations kept by a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace<R> {
    pub batch: usize,
    /// `H` before the first layer and after each layer, `(batch·T) × C` each.
    pub hs: Vec<Vec<R>>,
}

/// Output positions `p` whose tap at offset `off` reads inside a window of
/// length `t`: `(first p, first source position, count)`.
fn tap_span(t: usize, off: isize) -> Option<(usize, usize, usize)> {
    let lo = (-off).max(0);
    let hi = (t as isize - off).min(t as isize);
    (hi > lo).then(|| (lo as usize, (lo + off) as usize, (hi - lo) as usize))
}

impl<R: Real> Backbone<R> {
    /// He-uniform weights. The lift bias is drawn like its weights so that
    /// zero bits still carry a signal; the other biases start at zero. The
    /// convolution branches are scaled by `1/√L` so the residual stack keeps
    /// activations in range.
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x62]));
        let c = cfg.c;
        let fan = (cfg.k * c) as f64;
        let gain = 1.0 / (cfg.layers as f64).sqrt();
        Ok(Self {
            cfg: cfg.clone(),
            w_in: uniform(&mut rng, c, 6f64.sqrt()),
            b_in: uniform(&mut rng, c, 6f64.sqrt()),
            conv_w: (0..cfg.layers)
                .map(|_| uniform(&mut rng, cfg.k * c * c, (6.0 / fan).sqrt() * gain))
                .collect(),
            conv_b: vec![vec![R::zero(); c]; cfg.layers],
        })
    }

    fn check_bits(&self, bits: &[u8]) -> Result<usize> {
        let t = self.cfg.t;
        if !bits.len().is_multiple_of(t) {
            return Err(Error::Config(format!("{} bits is not a multiple of T = {t}", bits.len())));
        }
        Ok(bits.len() / t)
    }

    /// Forward over one chunk. Returns pooled features `batch × C` and,
    /// when `keep` is set, the activations.
    pub fn forward_chunk(&self, bits: &[u8], keep: bool) -> (Vec<R>, Option<Trace<R>>) {
        let EncoderConfig { t, c, k, .. } = self.cfg;
        let batch = bits.len() / t;
        let rows = batch * t;
        let mut h = vec![R::zero(); rows * c];
        for (row, &x) in h.chunks_mut(c).zip(bits) {
            let x = if x != 0 { R::one() } else { R::zero() };
            for ((v, &w), &b) in row.iter_mut().zip(&self.w_in).zip(&self.b_in) {
                *v = x * w + b;
            }
        }
        let mut hs = Vec::new();
        let half = ((k - 1) / 2) as isize;
        for (l, &dil) in self.cfg.dilations.iter().enumerate() {
            let mut next = h.clone();
            for j in 0..k {
                let Some((p0, q0, n)) = tap_span(t, (j as isize - half) * dil as isize) else { continue };
                let wj = &self.conv_w[l][j * c * c..(j + 1) * c * c];
                if n == t {
                    gemm(rows, c, c, &h, false, wj, false, R::one(), &mut next);
                    continue;
                }
                for b in 0..batch {
                    let src = &h[(b * t + q0) * c..][..n * c];
                    gemm(n, c, c, src, false, wj, false, R::one(), &mut next[(b * t + p0) * c..][..n * c]);
                }
            }
            for row in next.chunks_mut(c) {
                for (v, &b) in row.iter_mut().zip(&self.conv_b[l]) {
                    *v = (*v + b).max(R::zero());
                }
            }
            let prev = std::mem::replace(&mut h, next);
            if keep {
                hs.push(prev);
            }
        }
        let inv_t = R::one() / R::from_usize(t).unwrap();
        let mut pooled = vec![R::zero(); batch * c];
        for (b, out) in pooled.chunks_mut(c).enumerate() {
            for row in h[b * t * c..(b + 1) * t * c].chunks(c) {
                for (o, &v) in out.iter_mut().zip(row) {
                    *o = *o + v;
                }
            }
            for o in out.iter_mut() {
                *o = *o * inv_t;
            }
        }
        let trace = keep.then(|| {
            hs.push(h);
            Trace { batch, hs }
        });
        (pooled, trace)
    }

    /// Accumulates into `g` the gradient given `d_pooled = ∂L/∂pooled`.
    pub fn backward_chunk(&self, bits: &[u8], trace: &Trace<R>, d_pooled: &[R], g: &mut Backbone<R>) {
        let EncoderConfig { t, c, k, .. } = self.cfg;
        let batch = trace.batch;
        let rows = batch * t;
        let inv_t = R::one() / R::from_usize(t).unwrap();
        let mut dh = vec![R::zero(); rows * c];
        for (r, row) in dh.chunks_mut(c).enumerate() {
            let src = &d_pooled[(r / t) * c..][..c];
            for (d, &s) in row.iter_mut().zip(src) {
                *d = s * inv_t;
            }
        }
        let half = ((k - 1) / 2) as isize;
        for l in (0..self.cfg.layers).rev() {
            let dil = self.cfg.dilations[l];
            for (d, &o) in dh.iter_mut().zip(&trace.hs[l + 1]) {
                if o <= R::zero() {
                    *d = R::zero();
                }
            }
            for row in dh.chunks(c) {
                for (gb, &d) in g.conv_b[l].iter_mut().zip(row) {
                    *gb = *gb + d;
                }
            }
            let h = &trace.hs[l];
            let mut prev = dh.clone();
            for j in 0..k {
                let Some((p0, q0, n)) = tap_span(t, (j as isize - half) * dil as isize) else { continue };
                let wj = &self.conv_w[l][j * c * c..(j + 1) * c * c];
                let gw = &mut g.conv_w[l][j * c * c..(j + 1) * c * c];
                if n == t {
                    gemm(c, rows, c, h, true, &dh, false, R::one(), gw);
                    gemm(rows, c, c, &dh, false, wj, true, R::one(), &mut prev);
                    continue;
                }
                for b in 0..batch {
                    let src = &h[(b * t + q0) * c..][..n * c];
                    let d_out = &dh[(b * t + p0) * c..][..n * c];
                    gemm(c, n, c, src, true, d_out, false, R::one(), gw);
                    gemm(n, c, c, d_out, false, wj, true, R::one(), &mut prev[(b * t + q0) * c..][..n * c]);
                }
            }
            dh = prev;
        }
        for (row, &x) in dh.chunks(c).zip(bits) {
            for (gb, &d) in g.b_in.iter_mut().zip(row) {
                *gb = *gb + d;
            }
            if x != 0 {
                for (gw, &d) in g.w_in.iter_mut().zip(row) {
                    *gw = *gw + d;
                }
            }
        }
    }

    /// Pooled features for any number of windows, `batch × C`.
    pub fn pooled(&self, bits: &[u8]) -> Result<Vec<R>> {
        self.check_bits(bits)?;
        let parts: Vec<Vec<R>> = bits
            .par_chunks(CHUNK * self.cfg.t)
            .map(|chunk| self.forward_chunk(chunk, false).0)
            .collect();
        Ok(parts.concat())
    }

    pub fn cast<S: Real>(&self) -> Backbone<S> {
        Backbone {
            cfg: self.cfg.clone(),
            w_in: cast_vec(&self.w_in),
            b_in: cast_vec(&self.b_in),
            conv_w: self.conv_w.iter().map(|w| cast_vec(w)).collect(),
            conv_b: self.conv_b.iter().map(|b| cast_vec(b)).collect(),
        }
    }
}

pub(crate) fn cast_vec<R: Real, S: Real>(v: &[R]) -> Vec<S> {
    v.iter().map(|x| S::from_f64(x.to_f64().unwrap()).unwrap()).collect()
}

impl<R: Real> Params<R> for Backbone<R> {
    fn tensors(&self) -> Vec<&[R]> {
        let mut v: Vec<&[R]> = vec![&self.w_in, &self.b_in];
        for (w, b) in self.conv_w.iter().zip(&self.conv_b) {
            v.push(w);
            v.push(b);
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [R]> {
        let mut v: Vec<&mut [R]> = vec![&mut self.w_in, &mut self.b_in];
        for (w, b) in self.conv_w.iter_mut().zip(self.conv_b.iter_mut()) {
            v.push(w);
            v.push(b);
        }
        v
    }
}

/// Backbone plus the per-position output layer C → D. Since the output layer
/// is affine, applying it after mean pooling is the same as before.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<R> {
    pub backbone: Backbone<R>,
    /// `C × D`.
    pub w_out: Vec<R>,
    pub b_out: Vec<R>,
}

impl<R: Real> Encoder<R> {
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        let backbone = Backbone::init(cfg, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x6f]));
        Ok(Self {
            backbone,
            w_out: uniform(&mut rng, cfg.c * cfg.d, (6.0 / cfg.c as f64).sqrt()),
            b_out: vec![R::zero(); cfg.d],
        })
    }

    pub fn cfg(&self) -> &EncoderConfig {
        &self.backbone.cfg
    }

    fn project(&self, pooled: &[R]) -> Vec<R> {
        let (c, d) = (self.cfg().c, self.cfg().d);
        let batch = pooled.len() / c;
        let mut z: Vec<R> = self.b_out.iter().copied().cycle().take(batch * d).collect();
        gemm(batch, c, d, pooled, false, &self.w_out, false, R::one(), &mut z);
        z
    }

    /// Representations `batch × D` for concatenated windows.
    pub fn embed(&self, bits: &[u8]) -> Result<Vec<R>> {
        Ok(self.project(&self.backbone.pooled(bits)?))
    }

    /// The representation of one window.
    pub fn forward(&self, w: &Window) -> Result<Vec<R>> {
        if w.len() != self.cfg().t {
            return Err(Error::Config(format!("window of {} bits, encoder expects {}", w.len(), self.cfg().t)));
        }
        self.embed(&w.bits)
    }

    /// NT-Xent loss over `2N` windows paired `(2i, 2i+1)` and its gradient
    /// with respect to every encoder parameter.
    pub fn ntxent_gradients(&self, bits: &[u8], tau: R) -> Result<(R, Encoder<R>)> {
        let cfg = self.cfg();
        let n = self.backbone.check_bits(bits)?;
        let (c, d) = (cfg.c, cfg.d);
        let passes: Vec<(Vec<R>, Trace<R>)> = bits
            .par_chunks(CHUNK * cfg.t)
            .map(|chunk| {
                let (p, tr) = self.backbone.forward_chunk(chunk, true);
                (p, tr.expect("kept"))
            })
            .collect();
        let pooled: Vec<R> = passes.iter().flat_map(|(p, _)| p.iter().copied()).collect();
        let z = self.project(&pooled);
        let (loss, dz) = ntxent(&z, d, tau)?;

        let mut g = self.zeros_like();
        gemm(c, n, d, &pooled, true, &dz, false, R::zero(), &mut g.w_out);
        for row in dz.chunks(d) {
            for (gb, &v) in g.b_out.iter_mut().zip(row) {
                *gb = *gb + v;
            }
        }
        let mut d_pooled = vec![R::zero(); n * c];
        gemm(n, d, c, &dz, false, &self.w_out, true, R::zero(), &mut d_pooled);

        let parts: Vec<Backbone<R>> = passes
            .par_iter()
            .enumerate()
            .map(|(i, (_, trace))| {
                let start = i * CHUNK;
                let mut gb = self.backbone.zeros_like();
                let chunk_bits = &bits[start * cfg.t..(start + trace.batch) * cfg.t];
                let dp = &d_pooled[start * c..(start + trace.batch) * c];
                self.backbone.backward_chunk(chunk_bits, trace, dp, &mut gb);
                gb
            })
            .collect();
        for part in &parts {
            g.backbone.add_assign(part);
        }
        Ok((loss, g))
    }

    pub fn cast<S: Real>(&self) -> Encoder<S> {
        Encoder {
            backbone: self.backbone.cast(),
            w_out: cast_vec(&self.w_out),
            b_out: cast_vec(&self.b_out),
        }
    }
}

impl<R: Real> Params<R> for Encoder<R> {
    fn tensors(&self) -> Vec<&[R]> {
        let mut v = self.backbone.tensors();
        v.push(&self.w_out);
        v.push(&self.b_out);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [R]> {
        let mut v = self.backbone.tensors_mut();
        v.push(&mut self.w_out);
        v.push(&mut self.b_out);
        v
    }
}

/// Two fully connected layers over pooled features: C → hidden → 1 logit.
#[derive(Debug, Clone, PartialEq)]
pub struct Head<R> {
    pub c: usize,
    pub hidden: usize,
    /// `C × hidden`.
    pub w1: Vec<R>,
    pub b1: Vec<R>,
    pub w2: Vec<R>,
    pub b2: Vec<R>,
}

impl<R: Real> Head<R> {
    pub fn init(c: usize, hidden: usize, seed: u64) -> Result<Self> {
        if c == 0 || hidden == 0 {
            return Err(Error::Config("head dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x68]));
        Ok(Self {
            c,
            hidden,
            w1: uniform(&mut rng, c * hidden, (6.0 / c as f64).sqrt()),
            b1: vec![R::zero(); hidden],
            w2: uniform(&mut rng, hidden, (6.0 / hidden as f64).sqrt()),
            b2: vec![R::zero()],
        })
    }

    /// Hidden activations (after ReLU) and logits.
    pub fn forward(&self, pooled: &[R]) -> (Vec<R>, Vec<R>) {
        let batch = pooled.len() / self.c;
        let mut a: Vec<R> = self.b1.iter().copied().cycle().take(batch * self.hidden).collect();
        gemm(batch, self.c, self.hidden, pooled, false, &self.w1, false, R::one(), &mut a);
        for v in a.iter_mut() {
            *v = v.max(R::zero());
        }
        let logits = a
            .chunks(self.hidden)
            .map(|h| h.iter().zip(&self.w2).fold(self.b2[0], |acc, (&x, &w)| acc + x * w))
            .collect();
        (a, logits)
    }

    /// Mean binary cross entropy over the batch and its gradient.
    pub fn bce_gradients(&self, pooled: &[R], labels: &[u8]) -> Result<(R, Head<R>)> {
        let batch = pooled.len() / self.c;
        if batch == 0 || labels.len() != batch {
            return Err(Error::InputSize(format!("{batch} feature rows, {} labels", labels.len())));
        }
        let (a, logits) = self.forward(pooled);
        let (loss, dlogit) = bce(&logits, labels);
        let mut g = self.zeros_like();
        let mut da = vec![R::zero(); batch * self.hidden];
        for ((h, dh), &dl) in a.chunks(self.hidden).zip(da.chunks_mut(self.hidden)).zip(&dlogit) {
            g.b2[0] = g.b2[0] + dl;
            for j in 0..self.hidden {
                g.w2[j] = g.w2[j] + h[j] * dl;
                dh[j] = if h[j] > R::zero() { self.w2[j] * dl } else { R::zero() };
            }
        }
        gemm(self.c, batch, self.hidden, pooled, true, &da, false, R::zero(), &mut g.w1);
        for row in da.chunks(self.hidden) {
            for (gb, &v) in g.b1.iter_mut().zip(row) {
                *gb = *gb + v;
            }
        }
        Ok((loss, g))
    }

    pub fn cast<S: Real>(&self) -> Head<S> {
        Head {
            c: self.c,
            hidden: self.hidden,
            w1: cast_vec(&self.w1),
            b1: cast_vec(&self.b1),
            w2: cast_vec(&self.w2),
            b2: cast_vec(&self.b2),
        }
    }
}

impl<R: Real> Params<R> for Head<R> {
    fn tensors(&self) -> Vec<&[R]> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [R]> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// Frozen encoder stacked with a trainable head.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier<R> {
    pub encoder: Encoder<R>,
    pub head: Head<R>,
}

/// Gradient of the classifier loss. The backbone part is frozen and stays zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierGrads<R> {
    pub backbone: Backbone<R>,
    pub head: Head<R>,
}

impl<R: Real> Classifier<R> {
    pub fn new(encoder: Encoder<R>, hidden: usize, seed: u64) -> Result<Self> {
        let head = Head::init(encoder.cfg().c, hidden, seed)?;
        Ok(Self { encoder, head })
    }

    pub fn cfg(&self) -> &EncoderConfig {
        self.encoder.cfg()
    }

    pub fn layer(&self) -> Option<Layer> {
        Layer::from_window_bits(self.cfg().t)
    }

    /// Header probabilities for concatenated windows.
    pub fn predict(&self, bits: &[u8]) -> Result<Vec<R>> {
        let pooled = self.encoder.backbone.pooled(bits)?;
        Ok(self.head.forward(&pooled).1.into_iter().map(sigmoid).collect())
    }

    pub fn forward(&self, w: &Window) -> Result<R> {
        if w.len() != self.cfg().t {
            return Err(Error::Config(format!("window of {} bits, classifier expects {}", w.len(), self.cfg().t)));
        }
        Ok(self.predict(&w.bits)?[0])
    }

    pub fn gradients(&self, bits: &[u8], labels: &[u8]) -> Result<(R, ClassifierGrads<R>)> {
        let pooled = self.encoder.backbone.pooled(bits)?;
        let (loss, head) = self.head.bce_gradients(&pooled, labels)?;
        Ok((loss, ClassifierGrads { backbone: self.encoder.backbone.zeros_like(), head }))
    }

    pub fn cast<S: Real>(&self) -> Classifier<S> {
        Classifier { encoder: self.encoder.cast(), head: self.head.cast() }
    }
}
