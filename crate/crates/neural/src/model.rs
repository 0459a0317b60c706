//! Frozen-base encoder with a half-width adapter stack, MLM head and
//! candidate-scoring QA head.
//!
//! Adapter wiring: with base block outputs s_1..s_L and h_0 = 0, adapter
//! block i reads proj_i(s_i) + h_{i-1}; the fused output is
//! merge([s_L, h_L]).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::layers::{
    concat_cols, gather_rows, gelu, gelu_grad, softmax_rows, split_cols, Block, BlockCache, Dropout, EmbeddingCache,
    Embeddings, LayerNorm, Linear,
};
use crate::params::{Grads, ParamStore, Role};
use crate::tensor::Tensor;
use crate::{NeuralError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_positions: usize,
    pub dropout: f64,
    /// `false` removes the adapter: the base encoder is trained directly.
    pub adapter: bool,
    pub init_std: f64,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 1000,
            layers: 4,
            dim: 64,
            heads: 4,
            ff_dim: 256,
            max_positions: 128,
            dropout: 0.1,
            adapter: true,
            init_std: 0.02,
            layer_norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn adapter_dim(&self) -> usize {
        self.dim.div_ceil(2)
    }

    pub fn adapter_ff_dim(&self) -> usize {
        self.ff_dim.div_ceil(2)
    }

    /// Largest head count not above `heads` that divides the adapter width.
    pub fn adapter_heads(&self) -> usize {
        let da = self.adapter_dim();
        (1..=self.heads.max(1)).rev().find(|h| da % h == 0).unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NeuralError::Config(m));
        if self.vocab_size == 0 || self.layers == 0 || self.dim == 0 || self.max_positions == 0 {
            return bad("vocab_size, layers, dim and max_positions must be positive".into());
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return bad(format!("dim {} not divisible by {} heads", self.dim, self.heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QaObjective {
    /// Cross-entropy over the candidate list (single gold answer).
    Softmax,
    /// Independent per-candidate sigmoid (answer sets).
    Sigmoid,
}

#[derive(Clone, Debug)]
pub struct Adapter {
    pub proj: Vec<Linear>,
    pub blocks: Vec<Block>,
    pub merge: Linear,
    pub dim: usize,
}

#[derive(Clone, Debug)]
struct MlmHead {
    dense: Linear,
    norm: LayerNorm,
    decoder: Linear,
}

#[derive(Clone, Debug)]
struct QaHead {
    pooler: Linear,
    classifier: Linear,
}

/// Everything one forward pass produced.
#[derive(Clone, Debug)]
pub struct Encoding<T> {
    /// Embedding output followed by every base block output (L + 1 entries).
    pub states: Vec<Tensor<T>>,
    /// Adapter hidden states h_1..h_L.
    pub adapter_states: Vec<Tensor<T>>,
    pub fused: Tensor<T>,
    embed: EmbeddingCache<T>,
    blocks: Vec<BlockCache<T>>,
    adapter_inputs: Vec<Tensor<T>>,
    adapter_blocks: Vec<BlockCache<T>>,
    concat: Option<Tensor<T>>,
}

impl<T: Element> Encoding<T> {
    /// Attention weights of base block `layer` (0-based), one matrix per head.
    pub fn attention(&self, layer: usize) -> &[Tensor<T>] {
        &self.blocks[layer].attn.probs
    }
}

#[derive(Clone, Debug)]
pub struct MlmOutput<T> {
    pub loss: T,
    /// Logits at the labelled positions, one row each.
    pub logits: Tensor<T>,
    pub positions: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct QaOutput<T> {
    pub loss: T,
    pub scores: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    embed: Embeddings,
    blocks: Vec<Block>,
    adapter: Option<Adapter>,
    mlm: MlmHead,
    qa: QaHead,
}

impl<T: Element> Model<T> {
    /// Fresh model; every tensor is drawn from a generator seeded with `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();
        let c = &config;
        let (d, std, eps) = (c.dim, c.init_std, c.layer_norm_eps);
        let embed = Embeddings::new(
            &mut store,
            Role::BaseLm,
            c.vocab_size,
            c.max_positions,
            d,
            eps,
            std,
            &mut rng,
        );
        let blocks = (0..c.layers)
            .map(|i| {
                Block::new(
                    &mut store,
                    &format!("encoder.{i}"),
                    Role::BaseLm,
                    d,
                    c.heads,
                    c.ff_dim,
                    eps,
                    std,
                    &mut rng,
                )
            })
            .collect();
        let adapter = c.adapter.then(|| {
            let da = c.adapter_dim();
            let mut proj = Vec::new();
            let mut ablocks = Vec::new();
            for i in 0..c.layers {
                proj.push(Linear::new(
                    &mut store,
                    &format!("adapter.{i}.proj"),
                    Role::Adapter,
                    d,
                    da,
                    std,
                    &mut rng,
                ));
                ablocks.push(Block::new(
                    &mut store,
                    &format!("adapter.{i}"),
                    Role::Adapter,
                    da,
                    c.adapter_heads(),
                    c.adapter_ff_dim(),
                    eps,
                    std,
                    &mut rng,
                ));
            }
            let merge = Linear::new(&mut store, "adapter.merge", Role::Adapter, d + da, d, std, &mut rng);
            Adapter {
                proj,
                blocks: ablocks,
                merge,
                dim: da,
            }
        });
        let mlm = MlmHead {
            dense: Linear::new(&mut store, "mlm.dense", Role::MlmHead, d, d, std, &mut rng),
            norm: LayerNorm::new(&mut store, "mlm.norm", Role::MlmHead, d, eps, &mut rng),
            decoder: Linear::new(&mut store, "mlm.decoder", Role::MlmHead, d, c.vocab_size, std, &mut rng),
        };
        let qa = QaHead {
            pooler: Linear::new(&mut store, "qa.pooler", Role::QaHead, d, d, std, &mut rng),
            classifier: Linear::new(&mut store, "qa.classifier", Role::QaHead, d, 1, std, &mut rng),
        };
        Ok(Model {
            config,
            store,
            embed,
            blocks,
            adapter,
            mlm,
            qa,
        })
    }

    pub fn adapter(&self) -> Option<&Adapter> {
        self.adapter.as_ref()
    }

    pub fn new_grads(&self) -> Grads<T> {
        Grads::new(&self.store)
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if ids.is_empty() {
            return Err(NeuralError::Shape("empty input".into()));
        }
        if ids.len() > self.config.max_positions {
            return Err(NeuralError::Shape(format!(
                "sequence of {} exceeds {} positions",
                ids.len(),
                self.config.max_positions
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(NeuralError::Shape(format!(
                "token {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Base encoder states, adapter states and fused output.
    pub fn encode(&self, ids: &[u32], drop: &mut Dropout<'_>) -> Result<Encoding<T>> {
        self.check_ids(ids)?;
        let (e, embed) = self.embed.forward(&self.store, ids, drop);
        let mut states = vec![e];
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (out, cache) = b.forward(&self.store, states.last().unwrap(), drop);
            out.ensure_finite("encoder block")?;
            states.push(out);
            blocks.push(cache);
        }
        let mut enc = Encoding {
            fused: states.last().unwrap().clone(),
            states,
            adapter_states: Vec::new(),
            embed,
            blocks,
            adapter_inputs: Vec::new(),
            adapter_blocks: Vec::new(),
            concat: None,
        };
        if let Some(ad) = &self.adapter {
            let mut h = Tensor::zeros(&[ids.len(), ad.dim]);
            for (i, (proj, block)) in ad.proj.iter().zip(&ad.blocks).enumerate() {
                let mut input = proj.forward(&self.store, &enc.states[i + 1]);
                input.add_assign(&h);
                let (out, cache) = block.forward(&self.store, &input, drop);
                out.ensure_finite("adapter block")?;
                enc.adapter_inputs.push(input);
                enc.adapter_blocks.push(cache);
                enc.adapter_states.push(out.clone());
                h = out;
            }
            let concat = concat_cols(enc.states.last().unwrap(), &h);
            enc.fused = ad.merge.forward(&self.store, &concat);
            enc.concat = Some(concat);
        }
        Ok(enc)
    }

    /// Back-propagates a gradient on the fused output into every trainable tensor.
    pub fn backward(&self, enc: &Encoding<T>, dfused: &Tensor<T>, grads: &mut Grads<T>) {
        let base_trainable = self.store.role_trainable(Role::BaseLm);
        let layers = self.blocks.len();
        let mut dstates: Vec<Option<Tensor<T>>> = vec![None; layers + 1];
        let add = |slot: &mut Option<Tensor<T>>, d: Tensor<T>| match slot {
            Some(acc) => acc.add_assign(&d),
            None => *slot = Some(d),
        };
        match &self.adapter {
            Some(ad) => {
                let concat = enc.concat.as_ref().expect("adapter forward recorded");
                let dconcat = ad
                    .merge
                    .backward(&self.store, grads, concat, dfused, true)
                    .expect("dx requested");
                let (dlm, mut dh) = split_cols(&dconcat, self.config.dim);
                if base_trainable {
                    add(&mut dstates[layers], dlm);
                }
                for i in (0..layers).rev() {
                    let dinput = ad.blocks[i].backward(&self.store, grads, &enc.adapter_blocks[i], &dh);
                    if let Some(ds) =
                        ad.proj[i].backward(&self.store, grads, &enc.states[i + 1], &dinput, base_trainable)
                    {
                        add(&mut dstates[i + 1], ds);
                    }
                    dh = dinput;
                }
            }
            None => {
                if base_trainable {
                    dstates[layers] = Some(dfused.clone());
                }
            }
        }
        if !base_trainable {
            return;
        }
        for i in (0..layers).rev() {
            if let Some(d) = dstates[i + 1].take() {
                let dprev = self.blocks[i].backward(&self.store, grads, &enc.blocks[i], &d);
                add(&mut dstates[i], dprev);
            }
        }
        if let Some(d) = dstates[0].take() {
            self.embed.backward(&self.store, grads, &enc.embed, &d);
        }
    }

    /// Masked-LM loss (mean cross-entropy over labelled positions). With
    /// `grads`, adds `scale`·∂loss into them.
    pub fn mlm(
        &self,
        ids: &[u32],
        labels: &[Option<u32>],
        drop: &mut Dropout<'_>,
        grads: Option<&mut Grads<T>>,
        scale: T,
    ) -> Result<MlmOutput<T>> {
        if labels.len() != ids.len() {
            return Err(NeuralError::Shape(format!(
                "{} labels for {} tokens",
                labels.len(),
                ids.len()
            )));
        }
        let positions: Vec<usize> = labels.iter().enumerate().filter_map(|(i, l)| l.map(|_| i)).collect();
        if positions.is_empty() {
            return Err(NeuralError::DegenerateBatch);
        }
        if let Some(&bad) = labels.iter().flatten().find(|&&l| l as usize >= self.config.vocab_size) {
            return Err(NeuralError::Shape(format!("label {bad} outside vocabulary")));
        }
        let enc = self.encode(ids, drop)?;
        let g = gather_rows(&enc.fused, &positions);
        let pre = self.mlm.dense.forward(&self.store, &g);
        let mut act = pre.clone();
        act.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
        let (normed, ln_cache) = self.mlm.norm.forward(&self.store, &act);
        let logits = self.mlm.decoder.forward(&self.store, &normed);
        logits.ensure_finite("mlm logits")?;

        let m = positions.len();
        let mut probs = logits.clone();
        softmax_rows(&mut probs);
        let mut loss = T::zero();
        for (k, &p) in positions.iter().enumerate() {
            let row = logits.row(k);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
            loss = loss + lse - row[labels[p].unwrap() as usize];
        }
        let mn = T::c(m as f64);
        loss = loss / mn;
        if !loss.is_finite() {
            return Err(NeuralError::Numeric("mlm loss".into()));
        }

        if let Some(grads) = grads {
            let mut dlogits = probs;
            for (k, &p) in positions.iter().enumerate() {
                let row = dlogits.row_mut(k);
                row[labels[p].unwrap() as usize] = row[labels[p].unwrap() as usize] - T::one();
                row.iter_mut().for_each(|v| *v = *v * scale / mn);
            }
            let dnormed = self
                .mlm
                .decoder
                .backward(&self.store, grads, &normed, &dlogits, true)
                .expect("dx requested");
            let mut dact = self.mlm.norm.backward(&self.store, grads, &ln_cache, &dnormed);
            for (d, &x) in dact.data_mut().iter_mut().zip(pre.data()) {
                *d = *d * gelu_grad(x);
            }
            let dg = self
                .mlm
                .dense
                .backward(&self.store, grads, &g, &dact, true)
                .expect("dx requested");
            let mut dfused = Tensor::zeros(enc.fused.shape());
            for (k, &p) in positions.iter().enumerate() {
                let row = dfused.row_mut(p);
                for (a, &b) in row.iter_mut().zip(dg.row(k)) {
                    *a = *a + b;
                }
            }
            self.backward(&enc, &dfused, grads);
        }
        Ok(MlmOutput {
            loss,
            logits,
            positions,
        })
    }

    /// Per-position output distributions at the labelled positions.
    pub fn mlm_probabilities(&self, ids: &[u32], labels: &[Option<u32>]) -> Result<Tensor<T>> {
        let out = self.mlm(ids, labels, &mut Dropout::off(), None, T::one())?;
        let mut p = out.logits;
        softmax_rows(&mut p);
        Ok(p)
    }

    fn qa_forward(&self, ids: &[u32], drop: &mut Dropout<'_>) -> Result<(T, QaCache<T>)> {
        let enc = self.encode(ids, drop)?;
        let cls = gather_rows(&enc.fused, &[0]);
        let mut pooled = self.qa.pooler.forward(&self.store, &cls);
        pooled.data_mut().iter_mut().for_each(|v| *v = v.tanh());
        let score = self.qa.classifier.forward(&self.store, &pooled).data()[0];
        if !score.is_finite() {
            return Err(NeuralError::Numeric("qa score".into()));
        }
        Ok((score, QaCache { enc, cls, pooled }))
    }

    /// Scores of each candidate sequence (higher is better).
    pub fn qa_scores(&self, candidates: &[Vec<u32>]) -> Result<Vec<T>> {
        candidates
            .iter()
            .map(|c| self.qa_forward(c, &mut Dropout::off()).map(|(s, _)| s))
            .collect()
    }

    /// Candidate-ranking loss for one question. `gold[j]` marks correct
    /// candidates. With `grads`, adds `scale`·∂loss into them.
    pub fn qa(
        &self,
        candidates: &[Vec<u32>],
        gold: &[bool],
        objective: QaObjective,
        drop: &mut Dropout<'_>,
        grads: Option<&mut Grads<T>>,
        scale: T,
    ) -> Result<QaOutput<T>> {
        if candidates.is_empty() || candidates.len() != gold.len() {
            return Err(NeuralError::Shape("candidate and gold lists differ".into()));
        }
        if !gold.iter().any(|&g| g) && objective == QaObjective::Softmax {
            return Err(NeuralError::DegenerateBatch);
        }
        let mut scores = Vec::with_capacity(candidates.len());
        let mut caches = Vec::with_capacity(candidates.len());
        for c in candidates {
            let (s, cache) = self.qa_forward(c, drop)?;
            scores.push(s);
            caches.push(cache);
        }
        let k = T::c(candidates.len() as f64);
        let (loss, dscores): (T, Vec<T>) = match objective {
            QaObjective::Softmax => {
                let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
                let exps: Vec<T> = scores.iter().map(|&s| (s - max).exp()).collect();
                let total: T = exps.iter().copied().sum();
                let gold_mass: T = exps.iter().zip(gold).filter(|(_, &g)| g).map(|(&e, _)| e).sum();
                let loss = total.ln() - gold_mass.ln();
                let d = exps
                    .iter()
                    .zip(gold)
                    .map(|(&e, &g)| e / total - if g { e / gold_mass } else { T::zero() })
                    .collect();
                (loss, d)
            }
            QaObjective::Sigmoid => {
                let mut loss = T::zero();
                let mut d = Vec::with_capacity(scores.len());
                for (&s, &g) in scores.iter().zip(gold) {
                    let y = if g { T::one() } else { T::zero() };
                    // log(1 + e^{-|s|}) + max(s, 0) - y·s
                    loss = loss + (T::one() + (-s.abs()).exp()).ln() + s.max(T::zero()) - y * s;
                    let sig = T::one() / (T::one() + (-s).exp());
                    d.push((sig - y) / k);
                }
                (loss / k, d)
            }
        };
        if !loss.is_finite() {
            return Err(NeuralError::Numeric("qa loss".into()));
        }
        if let Some(grads) = grads {
            for (cache, &ds) in caches.iter().zip(&dscores) {
                let dout = Tensor::from_vec(&[1, 1], vec![ds * scale])?;
                let mut dpooled = self
                    .qa
                    .classifier
                    .backward(&self.store, grads, &cache.pooled, &dout, true)
                    .expect("dx requested");
                for (d, &p) in dpooled.data_mut().iter_mut().zip(cache.pooled.data()) {
                    *d = *d * (T::one() - p * p);
                }
                let dcls = self
                    .qa
                    .pooler
                    .backward(&self.store, grads, &cache.cls, &dpooled, true)
                    .expect("dx requested");
                let mut dfused = Tensor::zeros(cache.enc.fused.shape());
                dfused.row_mut(0).copy_from_slice(dcls.data());
                self.backward(&cache.enc, &dfused, grads);
            }
        }
        Ok(QaOutput { loss, scores })
    }
}

#[derive(Clone, Debug)]
struct QaCache<T> {
    enc: Encoding<T>,
    cls: Tensor<T>,
    pooled: Tensor<T>,
}
