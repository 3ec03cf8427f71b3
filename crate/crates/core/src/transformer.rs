//! Pre-norm transformer encoder with key-padding masks and fixed sinusoidal
//! position encoding.

use std::io::Write;
use std::rc::Rc;

use rand::Rng;

use crate::autodiff::{Bound, Graph, ParamId, ParamStore, Scalar, Tensor, Var, LEAKY_SLOPE};
use crate::error::{HttError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub token_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub feed_forward_dim: usize,
    pub max_sequence_length: usize,
    /// Layer norm after the last layer.
    pub final_norm: bool,
    /// Negative slope of the feed-forward activation.
    pub activation_slope: f64,
}

impl EncoderConfig {
    /// Two layers, eight heads, feed-forward width 2048.
    pub fn standard(token_dim: usize, max_sequence_length: usize) -> Self {
        EncoderConfig {
            token_dim,
            num_layers: 2,
            num_heads: 8,
            feed_forward_dim: 2048,
            max_sequence_length,
            final_norm: true,
            activation_slope: LEAKY_SLOPE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self;
        if c.token_dim == 0 || c.num_heads == 0 || c.feed_forward_dim == 0 || c.max_sequence_length == 0 {
            return Err(HttError::Config(format!("encoder dimensions must be at least 1: {c:?}")));
        }
        if c.token_dim % c.num_heads != 0 {
            return Err(HttError::Config(format!(
                "token_dim {} is not divisible by num_heads {}",
                c.token_dim, c.num_heads
            )));
        }
        if c.token_dim % 2 != 0 {
            return Err(HttError::Config(format!(
                "token_dim {} must be even for sine/cosine position encoding",
                c.token_dim
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.token_dim / self.num_heads
    }
}

/// `pe[pos, 2i] = sin(pos / 10000^(2i/d))`, `pe[pos, 2i+1] = cos(pos / 10000^(2i/d))`.
pub fn sinusoidal_pe<F: Scalar>(length: usize, d: usize) -> Result<Tensor<F>> {
    if d % 2 != 0 {
        return Err(HttError::invalid(format!("position encoding needs an even dimension, got {d}")));
    }
    let mut data = Vec::with_capacity(length * d);
    for pos in 0..length {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf((2 * i) as f64 / d as f64);
            data.push(F::of(angle.sin()));
            data.push(F::of(angle.cos()));
        }
    }
    Tensor::new([length, d], data)
}

/// Attention probabilities of one layer, `heads × queries × keys`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    pub heads: usize,
    pub queries: usize,
    pub keys: usize,
    pub weights: Vec<f64>,
}

impl AttentionRecord {
    pub fn weight(&self, head: usize, query: usize, key: usize) -> f64 {
        self.weights[(head * self.queries + query) * self.keys + key]
    }

    pub fn row(&self, head: usize, query: usize) -> &[f64] {
        let start = (head * self.queries + query) * self.keys;
        &self.weights[start..start + self.keys]
    }

    /// Head-averaged attention row of `query`.
    pub fn mean_row(&self, query: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.keys];
        for h in 0..self.heads {
            out.iter_mut().zip(self.row(h, query)).for_each(|(o, &w)| *o += w);
        }
        out.iter_mut().for_each(|o| *o /= self.heads as f64);
        out
    }
}

/// Graph handles of one layer's per-head attention probabilities.
#[derive(Clone, Debug)]
pub struct LayerAttention {
    pub heads: Vec<Var>,
}

impl LayerAttention {
    pub fn record<F: Scalar>(&self, g: &Graph<F>) -> AttentionRecord {
        let shape = g.shape(self.heads[0]);
        let (queries, keys) = (shape[0], shape[1]);
        let weights = self
            .heads
            .iter()
            .flat_map(|&h| g.value(h).iter().map(|w| w.as_f64()))
            .collect();
        AttentionRecord {
            heads: self.heads.len(),
            queries,
            keys,
            weights,
        }
    }
}

/// Writes `layer,head,query_index,key_index,weight` rows (no header).
pub fn write_attention_rows(out: &mut impl Write, prefix: &str, records: &[AttentionRecord]) -> std::io::Result<()> {
    for (l, r) in records.iter().enumerate() {
        for h in 0..r.heads {
            for q in 0..r.queries {
                for (k, w) in r.row(h, q).iter().enumerate() {
                    writeln!(out, "{prefix}{l},{h},{q},{k},{w}")?;
                }
            }
        }
    }
    Ok(())
}

pub const ATTENTION_CSV_HEADER: &str = "layer,head,query_index,key_index,weight";

#[derive(Clone, Debug)]
pub struct LayerParams {
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
    pub ff1_w: ParamId,
    pub ff1_b: ParamId,
    pub ff2_w: ParamId,
    pub ff2_b: ParamId,
}

/// Encoder stack whose parameters live in a shared [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Encoder<F: Scalar = f64> {
    pub cfg: EncoderConfig,
    pub layers: Vec<LayerParams>,
    pub final_norm: Option<(ParamId, ParamId)>,
    pe: Vec<F>,
}

/// Output tokens and per-layer attention of an encoder pass.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub tokens: Var,
    pub attention: Vec<LayerAttention>,
}

fn ln_pair<F: Scalar>(store: &mut ParamStore<F>, name: &str, d: usize) -> (ParamId, ParamId) {
    (store.add_const(format!("{name}.gain"), d, 1.0), store.add_const(format!("{name}.bias"), d, 0.0))
}

impl<F: Scalar> Encoder<F> {
    pub fn new(cfg: EncoderConfig, store: &mut ParamStore<F>, prefix: &str, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.token_dim;
        let ff = cfg.feed_forward_dim;
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for l in 0..cfg.num_layers {
            let p = format!("{prefix}.layer{l}");
            let (ln1_gain, ln1_bias) = ln_pair(store, &format!("{p}.ln1"), d);
            let wq = store.add_kaiming(format!("{p}.attn.wq"), d, d, rng);
            let bq = store.add_const(format!("{p}.attn.bq"), d, 0.0);
            let wk = store.add_kaiming(format!("{p}.attn.wk"), d, d, rng);
            let bk = store.add_const(format!("{p}.attn.bk"), d, 0.0);
            let wv = store.add_kaiming(format!("{p}.attn.wv"), d, d, rng);
            let bv = store.add_const(format!("{p}.attn.bv"), d, 0.0);
            let wo = store.add_kaiming(format!("{p}.attn.wo"), d, d, rng);
            let bo = store.add_const(format!("{p}.attn.bo"), d, 0.0);
            let (ln2_gain, ln2_bias) = ln_pair(store, &format!("{p}.ln2"), d);
            let ff1_w = store.add_kaiming(format!("{p}.ff1.w"), d, ff, rng);
            let ff1_b = store.add_const(format!("{p}.ff1.b"), ff, 0.0);
            let ff2_w = store.add_kaiming(format!("{p}.ff2.w"), ff, d, rng);
            let ff2_b = store.add_const(format!("{p}.ff2.b"), d, 0.0);
            layers.push(LayerParams {
                ln1_gain,
                ln1_bias,
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo,
                bo,
                ln2_gain,
                ln2_bias,
                ff1_w,
                ff1_b,
                ff2_w,
                ff2_b,
            });
        }
        let final_norm = cfg.final_norm.then(|| ln_pair(store, &format!("{prefix}.final_ln"), d));
        let pe = sinusoidal_pe::<F>(cfg.max_sequence_length, d)?.into_data();
        Ok(Encoder {
            cfg,
            layers,
            final_norm,
            pe,
        })
    }

    fn check_input(&self, g: &Graph<F>, tokens: Var, key_mask: &[bool]) -> Result<usize> {
        let s = g.shape(tokens);
        if s.len() != 2 || s[1] != self.cfg.token_dim {
            return Err(HttError::shape(format!(
                "encoder expects [n x {}] tokens, got {s:?}",
                self.cfg.token_dim
            )));
        }
        let n = s[0];
        if n > self.cfg.max_sequence_length {
            return Err(HttError::shape(format!(
                "sequence of {n} tokens exceeds max_sequence_length {}",
                self.cfg.max_sequence_length
            )));
        }
        if key_mask.len() != n {
            return Err(HttError::shape(format!("key mask of length {} for {n} tokens", key_mask.len())));
        }
        if !key_mask.iter().any(|&m| m) {
            return Err(HttError::invalid("every key is masked"));
        }
        Ok(n)
    }

    /// Multi-head scaled dot-product attention over `tokens` (no normalization).
    pub fn self_attention(
        &self,
        g: &mut Graph<F>,
        p: &Bound,
        layer: usize,
        tokens: Var,
        key_mask: &[bool],
    ) -> Result<(Var, LayerAttention)> {
        self.check_input(g, tokens, key_mask)?;
        let lp = &self.layers[layer];
        let mask: Rc<[bool]> = key_mask.into();
        let q = g.linear(tokens, p[lp.wq], Some(p[lp.bq]))?;
        let k = g.linear(tokens, p[lp.wk], Some(p[lp.bk]))?;
        let v = g.linear(tokens, p[lp.wv], Some(p[lp.bv]))?;
        let dh = self.cfg.head_dim();
        let scale = F::of(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(self.cfg.num_heads);
        let mut probs = Vec::with_capacity(self.cfg.num_heads);
        for h in 0..self.cfg.num_heads {
            let (qh, kh, vh) = if self.cfg.num_heads == 1 {
                (q, k, v)
            } else {
                (g.slice_cols(q, h * dh, dh)?, g.slice_cols(k, h * dh, dh)?, g.slice_cols(v, h * dh, dh)?)
            };
            let scores = g.matmul_nt(qh, kh)?;
            let scores = g.scale(scores, scale);
            let a = g.masked_softmax(scores, Some(mask.clone()))?;
            outs.push(g.matmul(a, vh)?);
            probs.push(a);
        }
        let merged = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
        let out = g.linear(merged, p[lp.wo], Some(p[lp.bo]))?;
        Ok((out, LayerAttention { heads: probs }))
    }

    /// `x + Attn(LN(x))` followed by `x + FF(LN(x))`.
    pub fn encoder_layer(
        &self,
        g: &mut Graph<F>,
        p: &Bound,
        layer: usize,
        tokens: Var,
        key_mask: &[bool],
    ) -> Result<(Var, LayerAttention)> {
        let lp = &self.layers[layer];
        let normed = g.layer_norm(tokens, p[lp.ln1_gain], p[lp.ln1_bias])?;
        let (attn, rec) = self.self_attention(g, p, layer, normed, key_mask)?;
        let x = g.add(tokens, attn)?;
        let normed = g.layer_norm(x, p[lp.ln2_gain], p[lp.ln2_bias])?;
        let hidden = g.linear(normed, p[lp.ff1_w], Some(p[lp.ff1_b]))?;
        let hidden = g.leaky_relu(hidden, F::of(self.cfg.activation_slope));
        let ff = g.linear(hidden, p[lp.ff2_w], Some(p[lp.ff2_b]))?;
        Ok((g.add(x, ff)?, rec))
    }

    /// Adds position encoding then runs every layer (and the final norm, if configured).
    pub fn encode(&self, g: &mut Graph<F>, p: &Bound, tokens: Var, key_mask: &[bool]) -> Result<Encoded> {
        let n = self.check_input(g, tokens, key_mask)?;
        let pe = g.constant([n, self.cfg.token_dim], self.pe[..n * self.cfg.token_dim].to_vec())?;
        let mut x = g.add(tokens, pe)?;
        let mut attention = Vec::with_capacity(self.layers.len());
        for l in 0..self.layers.len() {
            let (next, rec) = self.encoder_layer(g, p, l, x, key_mask)?;
            x = next;
            attention.push(rec);
        }
        if let Some((gain, bias)) = self.final_norm {
            x = g.layer_norm(x, p[gain], p[bias])?;
        }
        Ok(Encoded { tokens: x, attention })
    }

    pub fn all_params(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for l in &self.layers {
            ids.extend([
                l.ln1_gain, l.ln1_bias, l.wq, l.bq, l.wk, l.bk, l.wv, l.bv, l.wo, l.bo, l.ln2_gain, l.ln2_bias, l.ff1_w,
                l.ff1_b, l.ff2_w, l.ff2_b,
            ]);
        }
        if let Some((a, b)) = self.final_norm {
            ids.extend([a, b]);
        }
        ids
    }

    /// Output projections of attention and feed-forward blocks.
    pub fn output_projections(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.wo, l.bo, l.ff2_w, l.ff2_b]).collect()
    }
}
