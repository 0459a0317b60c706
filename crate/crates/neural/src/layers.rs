//! Encoder building blocks. Each layer's `forward` returns its output plus
//! whatever `backward` needs; `backward` accumulates parameter gradients into
//! `Grads` (skipping frozen tensors) and returns the input gradient on request.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::element::{gemm, Element, MatMut};
use crate::params::{Grads, Init, ParamId, ParamStore, Role};
use crate::tensor::Tensor;

/// Dropout state for one forward pass; `Dropout::off()` in evaluation.
pub struct Dropout<'a> {
    p: f64,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> Dropout<'a> {
    pub fn off() -> Self {
        Dropout { p: 0.0, rng: None }
    }

    pub fn train(p: f64, rng: &'a mut ChaCha8Rng) -> Self {
        Dropout { p, rng: Some(rng) }
    }

    /// Zeroes elements with probability `p`, scaling survivors; returns the mask.
    pub fn apply<T: Element>(&mut self, x: &mut Tensor<T>) -> Option<Vec<T>> {
        let rng = self.rng.as_mut().filter(|_| self.p > 0.0)?;
        let keep = T::c(1.0 / (1.0 - self.p));
        let mask: Vec<T> = (0..x.len())
            .map(|_| if rng.gen::<f64>() < self.p { T::zero() } else { keep })
            .collect();
        for (v, &m) in x.data_mut().iter_mut().zip(&mask) {
            *v = *v * m;
        }
        Some(mask)
    }
}

fn apply_mask<T: Element>(d: &Tensor<T>, mask: &Option<Vec<T>>) -> Tensor<T> {
    let mut out = d.clone();
    if let Some(mask) = mask {
        for (v, &m) in out.data_mut().iter_mut().zip(mask) {
            *v = *v * m;
        }
    }
    out
}

pub fn gelu<T: Element>(x: T) -> T {
    let c = T::c((2.0 / std::f64::consts::PI).sqrt());
    let u = c * (x + T::c(0.044715) * x * x * x);
    T::c(0.5) * x * (T::one() + u.tanh())
}

pub fn gelu_grad<T: Element>(x: T) -> T {
    let c = T::c((2.0 / std::f64::consts::PI).sqrt());
    let a = T::c(0.044715);
    let t = (c * (x + a * x * x * x)).tanh();
    T::c(0.5) * (T::one() + t) + T::c(0.5) * x * (T::one() - t * t) * c * (T::one() + T::c(3.0) * a * x * x)
}

/// Row-wise softmax in place.
pub fn softmax_rows<T: Element>(t: &mut Tensor<T>) {
    let cols = t.cols();
    for row in t.data_mut().chunks_mut(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        role: Role,
        input: usize,
        output: usize,
        std: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Linear {
            w: store.add(
                &format!("{name}.weight"),
                role,
                &[input, output],
                Init::Normal(std),
                rng,
            ),
            b: store.add(&format!("{name}.bias"), role, &[output], Init::Zeros, rng),
            input,
            output,
        }
    }

    pub fn forward<T: Element>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Tensor<T> {
        let n = x.rows();
        let mut y = Tensor::zeros(&[n, self.output]);
        let b = store.value(self.b).data();
        for i in 0..n {
            y.row_mut(i).copy_from_slice(b);
        }
        gemm(T::one(), x.mat(), store.value(self.w).mat(), T::one(), y.mat_mut());
        y
    }

    pub fn backward<T: Element>(
        &self,
        store: &ParamStore<T>,
        grads: &mut Grads<T>,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        if let Some(gw) = grads.slot(self.w) {
            gemm(
                T::one(),
                x.mat().t(),
                dy.mat(),
                T::one(),
                MatMut::new(gw, self.input, self.output),
            );
        }
        if let Some(gb) = grads.slot(self.b) {
            for row in dy.data().chunks(self.output) {
                for (g, &d) in gb.iter_mut().zip(row) {
                    *g = *g + d;
                }
            }
        }
        need_dx.then(|| {
            let mut dx = Tensor::zeros(&[dy.rows(), self.input]);
            gemm(
                T::one(),
                dy.mat(),
                store.value(self.w).mat().t(),
                T::zero(),
                dx.mat_mut(),
            );
            dx
        })
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct LayerNormCache<T> {
    xhat: Tensor<T>,
    inv: Vec<T>,
}

impl LayerNorm {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        role: Role,
        dim: usize,
        eps: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        LayerNorm {
            gain: store.add(&format!("{name}.gain"), role, &[dim], Init::Ones, rng),
            bias: store.add(&format!("{name}.bias"), role, &[dim], Init::Zeros, rng),
            eps,
        }
    }

    pub fn forward<T: Element>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> (Tensor<T>, LayerNormCache<T>) {
        let d = x.cols();
        let g = store.value(self.gain).data();
        let b = store.value(self.bias).data();
        let dn = T::c(d as f64);
        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        let mut inv = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let row = x.row(i);
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let s = T::one() / (var + T::c(self.eps)).sqrt();
            inv.push(s);
            let xh = xhat.row_mut(i);
            let yr = y.row_mut(i);
            for j in 0..d {
                xh[j] = (row[j] - mean) * s;
                yr[j] = g[j] * xh[j] + b[j];
            }
        }
        (y, LayerNormCache { xhat, inv })
    }

    pub fn backward<T: Element>(
        &self,
        store: &ParamStore<T>,
        grads: &mut Grads<T>,
        cache: &LayerNormCache<T>,
        dy: &Tensor<T>,
    ) -> Tensor<T> {
        let d = dy.cols();
        let dn = T::c(d as f64);
        let g = store.value(self.gain).data();
        if let Some(gg) = grads.slot(self.gain) {
            for i in 0..dy.rows() {
                for ((acc, &dyv), &xh) in gg.iter_mut().zip(dy.row(i)).zip(cache.xhat.row(i)) {
                    *acc = *acc + dyv * xh;
                }
            }
        }
        if let Some(gb) = grads.slot(self.bias) {
            for i in 0..dy.rows() {
                for (acc, &dyv) in gb.iter_mut().zip(dy.row(i)) {
                    *acc = *acc + dyv;
                }
            }
        }
        let mut dx = Tensor::zeros(dy.shape());
        let mut dxhat = vec![T::zero(); d];
        for i in 0..dy.rows() {
            let xh = cache.xhat.row(i);
            for j in 0..d {
                dxhat[j] = dy.row(i)[j] * g[j];
            }
            let sum: T = dxhat.iter().copied().sum();
            let dot: T = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum();
            let s = cache.inv[i] / dn;
            let out = dx.row_mut(i);
            for j in 0..d {
                out[j] = s * (dn * dxhat[j] - sum - xh[j] * dot);
            }
        }
        dx
    }
}

#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

#[derive(Clone, Debug)]
pub struct AttentionCache<T> {
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    /// Per-head attention weights, each (n × n).
    pub probs: Vec<Tensor<T>>,
    ctx: Tensor<T>,
}

impl Attention {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        role: Role,
        dim: usize,
        heads: usize,
        std: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Attention {
            q: Linear::new(store, &format!("{name}.query"), role, dim, dim, std, rng),
            k: Linear::new(store, &format!("{name}.key"), role, dim, dim, std, rng),
            v: Linear::new(store, &format!("{name}.value"), role, dim, dim, std, rng),
            o: Linear::new(store, &format!("{name}.output"), role, dim, dim, std, rng),
            heads,
        }
    }

    fn head_dim(&self) -> usize {
        self.q.output / self.heads
    }

    pub fn forward<T: Element>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> (Tensor<T>, AttentionCache<T>) {
        let n = x.rows();
        let d = self.q.output;
        let dh = self.head_dim();
        let scale = T::c(1.0 / (dh as f64).sqrt());
        let q = self.q.forward(store, x);
        let k = self.k.forward(store, x);
        let v = self.v.forward(store, x);
        let mut ctx = Tensor::zeros(&[n, d]);
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let mut s = Tensor::zeros(&[n, n]);
            gemm(
                scale,
                q.mat().cols(h * dh, dh),
                k.mat().cols(h * dh, dh).t(),
                T::zero(),
                s.mat_mut(),
            );
            softmax_rows(&mut s);
            gemm(
                T::one(),
                s.mat(),
                v.mat().cols(h * dh, dh),
                T::zero(),
                ctx.mat_mut().cols(h * dh, dh),
            );
            probs.push(s);
        }
        let out = self.o.forward(store, &ctx);
        (out, AttentionCache { q, k, v, probs, ctx })
    }

    pub fn backward<T: Element>(
        &self,
        store: &ParamStore<T>,
        grads: &mut Grads<T>,
        x: &Tensor<T>,
        cache: &AttentionCache<T>,
        dy: &Tensor<T>,
    ) -> Tensor<T> {
        let n = x.rows();
        let d = self.q.output;
        let dh = self.head_dim();
        let scale = T::c(1.0 / (dh as f64).sqrt());
        let dctx = self
            .o
            .backward(store, grads, &cache.ctx, dy, true)
            .expect("dx requested");
        let mut dq = Tensor::zeros(&[n, d]);
        let mut dk = Tensor::zeros(&[n, d]);
        let mut dv = Tensor::zeros(&[n, d]);
        let mut dp = Tensor::zeros(&[n, n]);
        for h in 0..self.heads {
            let p = &cache.probs[h];
            let dctx_h = dctx.mat().cols(h * dh, dh);
            gemm(
                T::one(),
                dctx_h,
                cache.v.mat().cols(h * dh, dh).t(),
                T::zero(),
                dp.mat_mut(),
            );
            gemm(T::one(), p.mat().t(), dctx_h, T::zero(), dv.mat_mut().cols(h * dh, dh));
            for i in 0..n {
                let pr = p.row(i);
                let dot: T = pr.iter().zip(dp.row(i)).map(|(&a, &b)| a * b).sum();
                let row = dp.row_mut(i);
                for j in 0..n {
                    row[j] = pr[j] * (row[j] - dot);
                }
            }
            gemm(
                scale,
                dp.mat(),
                cache.k.mat().cols(h * dh, dh),
                T::zero(),
                dq.mat_mut().cols(h * dh, dh),
            );
            gemm(
                scale,
                dp.mat().t(),
                cache.q.mat().cols(h * dh, dh),
                T::zero(),
                dk.mat_mut().cols(h * dh, dh),
            );
        }
        let mut dx = self.q.backward(store, grads, x, &dq, true).expect("dx requested");
        dx.add_assign(&self.k.backward(store, grads, x, &dk, true).expect("dx requested"));
        dx.add_assign(&self.v.backward(store, grads, x, &dv, true).expect("dx requested"));
        dx
    }
}

/// Post-layer-norm encoder block: LN(x + Attn(x)), then LN(h + FF(h)).
#[derive(Clone, Debug)]
pub struct Block {
    pub attn: Attention,
    pub ln1: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub ln2: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct BlockCache<T> {
    x: Tensor<T>,
    pub attn: AttentionCache<T>,
    drop1: Option<Vec<T>>,
    ln1: LayerNormCache<T>,
    h1: Tensor<T>,
    pre: Tensor<T>,
    act: Tensor<T>,
    drop2: Option<Vec<T>>,
    ln2: LayerNormCache<T>,
}

impl Block {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        role: Role,
        dim: usize,
        heads: usize,
        ff: usize,
        eps: f64,
        std: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Block {
            attn: Attention::new(store, &format!("{name}.attention"), role, dim, heads, std, rng),
            ln1: LayerNorm::new(store, &format!("{name}.attention_norm"), role, dim, eps, rng),
            ff_in: Linear::new(store, &format!("{name}.ff_in"), role, dim, ff, std, rng),
            ff_out: Linear::new(store, &format!("{name}.ff_out"), role, ff, dim, std, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ff_norm"), role, dim, eps, rng),
        }
    }

    pub fn forward<T: Element>(
        &self,
        store: &ParamStore<T>,
        x: &Tensor<T>,
        drop: &mut Dropout<'_>,
    ) -> (Tensor<T>, BlockCache<T>) {
        let (mut a, attn) = self.attn.forward(store, x);
        let drop1 = drop.apply(&mut a);
        a.add_assign(x);
        let (h1, ln1) = self.ln1.forward(store, &a);
        let pre = self.ff_in.forward(store, &h1);
        let mut act = pre.clone();
        act.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
        let mut f = self.ff_out.forward(store, &act);
        let drop2 = drop.apply(&mut f);
        f.add_assign(&h1);
        let (out, ln2) = self.ln2.forward(store, &f);
        (
            out,
            BlockCache {
                x: x.clone(),
                attn,
                drop1,
                ln1,
                h1,
                pre,
                act,
                drop2,
                ln2,
            },
        )
    }

    pub fn backward<T: Element>(
        &self,
        store: &ParamStore<T>,
        grads: &mut Grads<T>,
        cache: &BlockCache<T>,
        dy: &Tensor<T>,
    ) -> Tensor<T> {
        let dr2 = self.ln2.backward(store, grads, &cache.ln2, dy);
        let df = apply_mask(&dr2, &cache.drop2);
        let mut dact = self
            .ff_out
            .backward(store, grads, &cache.act, &df, true)
            .expect("dx requested");
        for (g, &p) in dact.data_mut().iter_mut().zip(cache.pre.data()) {
            *g = *g * gelu_grad(p);
        }
        let mut dh1 = self
            .ff_in
            .backward(store, grads, &cache.h1, &dact, true)
            .expect("dx requested");
        dh1.add_assign(&dr2);
        let dr1 = self.ln1.backward(store, grads, &cache.ln1, &dh1);
        let da = apply_mask(&dr1, &cache.drop1);
        let mut dx = self.attn.backward(store, grads, &cache.x, &cache.attn, &da);
        dx.add_assign(&dr1);
        dx
    }
}

/// Token plus learned position embeddings, then layer norm and dropout.
#[derive(Clone, Debug)]
pub struct Embeddings {
    pub tokens: ParamId,
    pub positions: ParamId,
    pub norm: LayerNorm,
    pub dim: usize,
}

#[derive(Clone, Debug)]
pub struct EmbeddingCache<T> {
    ids: Vec<u32>,
    norm: LayerNormCache<T>,
    drop: Option<Vec<T>>,
}

impl Embeddings {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        role: Role,
        vocab: usize,
        positions: usize,
        dim: usize,
        eps: f64,
        std: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Embeddings {
            tokens: store.add("embeddings.tokens", role, &[vocab, dim], Init::Normal(std), rng),
            positions: store.add("embeddings.positions", role, &[positions, dim], Init::Normal(std), rng),
            norm: LayerNorm::new(store, "embeddings.norm", role, dim, eps, rng),
            dim,
        }
    }

    /// Sum of token and position rows, before normalization.
    pub fn raw<T: Element>(&self, store: &ParamStore<T>, ids: &[u32]) -> Tensor<T> {
        let mut e = Tensor::zeros(&[ids.len(), self.dim]);
        let tok = store.value(self.tokens);
        let pos = store.value(self.positions);
        for (i, &id) in ids.iter().enumerate() {
            let row = e.row_mut(i);
            for ((r, &t), &p) in row.iter_mut().zip(tok.row(id as usize)).zip(pos.row(i)) {
                *r = t + p;
            }
        }
        e
    }

    pub fn forward<T: Element>(
        &self,
        store: &ParamStore<T>,
        ids: &[u32],
        drop: &mut Dropout<'_>,
    ) -> (Tensor<T>, EmbeddingCache<T>) {
        let e = self.raw(store, ids);
        let (mut out, norm) = self.norm.forward(store, &e);
        let mask = drop.apply(&mut out);
        (
            out,
            EmbeddingCache {
                ids: ids.to_vec(),
                norm,
                drop: mask,
            },
        )
    }

    pub fn backward<T: Element>(
        &self,
        store: &ParamStore<T>,
        grads: &mut Grads<T>,
        cache: &EmbeddingCache<T>,
        dy: &Tensor<T>,
    ) {
        let dy = apply_mask(dy, &cache.drop);
        let de = self.norm.backward(store, grads, &cache.norm, &dy);
        let d = self.dim;
        if let Some(gt) = grads.slot(self.tokens) {
            for (i, &id) in cache.ids.iter().enumerate() {
                let dst = &mut gt[id as usize * d..(id as usize + 1) * d];
                for (g, &v) in dst.iter_mut().zip(de.row(i)) {
                    *g = *g + v;
                }
            }
        }
        if let Some(gp) = grads.slot(self.positions) {
            for i in 0..cache.ids.len() {
                for (g, &v) in gp[i * d..(i + 1) * d].iter_mut().zip(de.row(i)) {
                    *g = *g + v;
                }
            }
        }
    }
}

/// Copies rows `rows` of `x` into a new (rows.len() × cols) tensor.
pub fn gather_rows<T: Element>(x: &Tensor<T>, rows: &[usize]) -> Tensor<T> {
    let mut out = Tensor::zeros(&[rows.len(), x.cols()]);
    for (k, &r) in rows.iter().enumerate() {
        out.row_mut(k).copy_from_slice(x.row(r));
    }
    out
}

/// Horizontal concatenation of two matrices with equal row counts.
pub fn concat_cols<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (ca, cb) = (a.cols(), b.cols());
    let mut out = Tensor::zeros(&[a.rows(), ca + cb]);
    for i in 0..a.rows() {
        let row = out.row_mut(i);
        row[..ca].copy_from_slice(a.row(i));
        row[ca..].copy_from_slice(b.row(i));
    }
    out
}

/// Inverse of `concat_cols` for gradients.
pub fn split_cols<T: Element>(x: &Tensor<T>, left: usize) -> (Tensor<T>, Tensor<T>) {
    let right = x.cols() - left;
    let mut a = Tensor::zeros(&[x.rows(), left]);
    let mut b = Tensor::zeros(&[x.rows(), right]);
    for i in 0..x.rows() {
        a.row_mut(i).copy_from_slice(&x.row(i)[..left]);
        b.row_mut(i).copy_from_slice(&x.row(i)[left..]);
    }
    (a, b)
}
