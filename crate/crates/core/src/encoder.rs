//! Pre-norm transformer encoder over the heterogeneous token sequence.

use ndarray::{s, Array2, Array4, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    gelu, gelu_grad, join, softmax_rows, LayerNorm, LayerNormCache, Linear, Parameters,
};
use crate::tokenizer::{SegmentCounts, TokenSequence};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub depth: usize,
    pub heads: usize,
    pub dim: usize,
    pub mlp_dim: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            depth: 8,
            heads: 8,
            dim: 768,
            mlp_dim: 1536,
            dropout: 0.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.dim == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "embedding dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.mlp_dim == 0 {
            return Err(Error::config("mlp_dim must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// Whether a pass is for training (dropout active) or inference.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

/// Post-softmax attention weights of every layer and head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    /// `layers × heads × N × N`; row `i` is query token `i`.
    pub weights: Array4<f64>,
    pub counts: SegmentCounts,
}

impl AttentionRecord {
    pub fn layers(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn heads(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn tokens(&self) -> usize {
        self.weights.shape()[2]
    }
}

/// Scaled dot-product attention of one head,
/// `softmax(Q Kᵀ / sqrt(d)) V` with `d` the key width.
///
/// Returns the weighted values and the `N × N` weights.
pub fn attention(
    q: ArrayView2<'_, f64>,
    k: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
) -> (Array2<f64>, Array2<f64>) {
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let mut w = q.dot(&k.t());
    w *= scale;
    softmax_rows(&mut w);
    (w.dot(&v), w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBlock {
    pub norm1: LayerNorm,
    pub qkv: Linear,
    pub proj: Linear,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl EncoderBlock {
    fn init(cfg: &EncoderConfig, rng: &mut impl Rng) -> Self {
        EncoderBlock {
            norm1: LayerNorm::new(cfg.dim),
            qkv: Linear::init(cfg.dim, 3 * cfg.dim, rng),
            proj: Linear::init(cfg.dim, cfg.dim, rng),
            norm2: LayerNorm::new(cfg.dim),
            fc1: Linear::init(cfg.dim, cfg.mlp_dim, rng),
            fc2: Linear::init(cfg.mlp_dim, cfg.dim, rng),
        }
    }
}

impl Parameters for EncoderBlock {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewD<'a, f64>)) {
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.qkv.visit(&join(prefix, "attn.qkv"), f);
        self.proj.visit(&join(prefix, "attn.proj"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
        self.fc1.visit(&join(prefix, "mlp.fc1"), f);
        self.fc2.visit(&join(prefix, "mlp.fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewMutD<'_, f64>)) {
        self.norm1.visit_mut(&join(prefix, "norm1"), f);
        self.qkv.visit_mut(&join(prefix, "attn.qkv"), f);
        self.proj.visit_mut(&join(prefix, "attn.proj"), f);
        self.norm2.visit_mut(&join(prefix, "norm2"), f);
        self.fc1.visit_mut(&join(prefix, "mlp.fc1"), f);
        self.fc2.visit_mut(&join(prefix, "mlp.fc2"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub blocks: Vec<EncoderBlock>,
    /// Applied after the last block, before decoding.
    pub norm: LayerNorm,
}

impl EncoderParams {
    pub fn init(cfg: &EncoderConfig, rng: &mut impl Rng) -> Self {
        EncoderParams {
            blocks: (0..cfg.depth)
                .map(|_| EncoderBlock::init(cfg, rng))
                .collect(),
            norm: LayerNorm::new(cfg.dim),
        }
    }
}

impl Parameters for EncoderParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewD<'a, f64>)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("layers.{i}")), f);
        }
        self.norm.visit(&join(prefix, "norm"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewMutD<'_, f64>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("layers.{i}")), f);
        }
        self.norm.visit_mut(&join(prefix, "norm"), f);
    }
}

/// Activations of one block kept for the backward pass.
#[derive(Debug, Clone)]
struct BlockCache {
    norm1: LayerNormCache,
    h1: Array2<f64>,
    qkv: Array2<f64>,
    weights: Vec<Array2<f64>>,
    heads_out: Array2<f64>,
    drop1: Option<Array2<f64>>,
    norm2: LayerNormCache,
    h2: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
    drop2: Option<Array2<f64>>,
}

/// Everything a forward pass leaves behind.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    /// Final normalized output, `N × D`.
    pub output: Array2<f64>,
    blocks: Vec<BlockCache>,
    final_norm: LayerNormCache,
}

impl EncoderTrace {
    /// Stacks the stored attention weights into a record.
    pub fn attention_record(&self, counts: SegmentCounts) -> AttentionRecord {
        let k = self.blocks.len();
        let a = self.blocks.first().map_or(0, |b| b.weights.len());
        let n = self.output.nrows();
        let mut weights = Array4::zeros((k, a, n, n));
        for (l, b) in self.blocks.iter().enumerate() {
            for (h, w) in b.weights.iter().enumerate() {
                weights.slice_mut(s![l, h, .., ..]).assign(w);
            }
        }
        AttentionRecord { weights, counts }
    }
}

fn dropout_mask(shape: (usize, usize), rate: f64, mode: &mut Mode<'_>) -> Option<Array2<f64>> {
    match mode {
        Mode::Train(rng) if rate > 0.0 => {
            let keep = 1.0 / (1.0 - rate);
            Some(Array2::from_shape_fn(shape, |_| {
                if rng.gen::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            }))
        }
        _ => None,
    }
}

impl EncoderParams {
    /// Runs all blocks and the final norm on `x` (`N × D`).
    pub fn forward(
        &self,
        x: ArrayView2<'_, f64>,
        cfg: &EncoderConfig,
        mut mode: Mode<'_>,
    ) -> Result<EncoderTrace> {
        if x.ncols() != cfg.dim {
            return Err(Error::config(format!(
                "token width {} does not match encoder dim {}",
                x.ncols(),
                cfg.dim
            )));
        }
        let d = cfg.dim;
        let dh = cfg.head_dim();
        let n = x.nrows();
        let mut x = x.to_owned();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (layer, blk) in self.blocks.iter().enumerate() {
            let (h1, norm1) = blk.norm1.forward(x.view());
            let qkv = blk.qkv.forward(h1.view());
            let mut heads_out = Array2::zeros((n, d));
            let mut weights = Vec::with_capacity(cfg.heads);
            for a in 0..cfg.heads {
                let q = qkv.slice(s![.., a * dh..(a + 1) * dh]);
                let k = qkv.slice(s![.., d + a * dh..d + (a + 1) * dh]);
                let v = qkv.slice(s![.., 2 * d + a * dh..2 * d + (a + 1) * dh]);
                let (o, w) = attention(q, k, v);
                heads_out.slice_mut(s![.., a * dh..(a + 1) * dh]).assign(&o);
                weights.push(w);
            }
            let mut attn_out = blk.proj.forward(heads_out.view());
            let drop1 = dropout_mask((n, d), cfg.dropout, &mut mode);
            if let Some(m) = &drop1 {
                attn_out *= m;
            }
            x += &attn_out;

            let (h2, norm2) = blk.norm2.forward(x.view());
            let pre = blk.fc1.forward(h2.view());
            let act = pre.mapv(gelu);
            let mut mlp_out = blk.fc2.forward(act.view());
            let drop2 = dropout_mask((n, d), cfg.dropout, &mut mode);
            if let Some(m) = &drop2 {
                mlp_out *= m;
            }
            x += &mlp_out;

            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!(
                    "non-finite activation after encoder layer {layer}"
                )));
            }
            caches.push(BlockCache {
                norm1,
                h1,
                qkv,
                weights,
                heads_out,
                drop1,
                norm2,
                h2,
                pre,
                act,
                drop2,
            });
        }
        let (output, final_norm) = self.norm.forward(x.view());
        Ok(EncoderTrace {
            output,
            blocks: caches,
            final_norm,
        })
    }

    /// Gradient of the encoder input given the gradient of its output;
    /// parameter gradients accumulate into `grad`.
    pub fn backward(
        &self,
        trace: &EncoderTrace,
        d_out: ArrayView2<'_, f64>,
        cfg: &EncoderConfig,
        grad: &mut EncoderParams,
    ) -> Array2<f64> {
        let d = cfg.dim;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dx = self.norm.backward(&trace.final_norm, d_out, &mut grad.norm);
        for ((blk, cache), g) in self
            .blocks
            .iter()
            .zip(&trace.blocks)
            .zip(grad.blocks.iter_mut())
            .rev()
        {
            // MLP branch.
            let mut d_mlp = dx.clone();
            if let Some(m) = &cache.drop2 {
                d_mlp *= m;
            }
            let mut d_act = blk.fc2.backward(cache.act.view(), d_mlp.view(), &mut g.fc2);
            d_act.zip_mut_with(&cache.pre, |da, &p| *da *= gelu_grad(p));
            let d_h2 = blk.fc1.backward(cache.h2.view(), d_act.view(), &mut g.fc1);
            dx += &blk.norm2.backward(&cache.norm2, d_h2.view(), &mut g.norm2);

            // Attention branch.
            let mut d_attn = dx.clone();
            if let Some(m) = &cache.drop1 {
                d_attn *= m;
            }
            let d_heads = blk
                .proj
                .backward(cache.heads_out.view(), d_attn.view(), &mut g.proj);
            let mut d_qkv = Array2::zeros(cache.qkv.raw_dim());
            for (a, w) in cache.weights.iter().enumerate() {
                let q = cache.qkv.slice(s![.., a * dh..(a + 1) * dh]);
                let k = cache.qkv.slice(s![.., d + a * dh..d + (a + 1) * dh]);
                let v = cache
                    .qkv
                    .slice(s![.., 2 * d + a * dh..2 * d + (a + 1) * dh]);
                let d_o = d_heads.slice(s![.., a * dh..(a + 1) * dh]);
                let d_w = d_o.dot(&v.t());
                let d_v = w.t().dot(&d_o);
                // Softmax backward, row by row.
                let row_dot = (&d_w * w).sum_axis(Axis(1));
                let mut d_s = d_w;
                d_s -= &row_dot.insert_axis(Axis(1));
                d_s *= w;
                d_s *= scale;
                let d_q = d_s.dot(&k);
                let d_k = d_s.t().dot(&q);
                d_qkv.slice_mut(s![.., a * dh..(a + 1) * dh]).assign(&d_q);
                d_qkv
                    .slice_mut(s![.., d + a * dh..d + (a + 1) * dh])
                    .assign(&d_k);
                d_qkv
                    .slice_mut(s![.., 2 * d + a * dh..2 * d + (a + 1) * dh])
                    .assign(&d_v);
            }
            let d_h1 = blk.qkv.backward(cache.h1.view(), d_qkv.view(), &mut g.qkv);
            dx += &blk.norm1.backward(&cache.norm1, d_h1.view(), &mut g.norm1);
        }
        dx
    }
}

/// Encodes a token sequence, optionally recording attention.
pub fn encoder_forward(
    seq: &TokenSequence,
    cfg: &EncoderConfig,
    params: &EncoderParams,
    record: bool,
) -> Result<(TokenSequence, Option<AttentionRecord>)> {
    let trace = params.forward(seq.embeddings.view(), cfg, Mode::Eval)?;
    let rec = record.then(|| trace.attention_record(seq.counts()));
    Ok((seq.with_embeddings(trace.output), rec))
}
