//! A small float32 encoder-decoder transformer used as a fault-injection target.
//!
//! Two variants share one code path:
//!
//! * `Opus`: learned position embeddings, post-sublayer layer norm with bias,
//!   biased linear maps and a two-matrix GeLU feed-forward block.
//! * `T5`: no position embeddings but a per-head relative position bias added
//!   to the attention logits, pre-sublayer layer norm, no bias vectors at all,
//!   and a gated three-matrix feed-forward block.
//!
//! Attention logits are `QK^T` (+ relative bias) without `1/sqrt(d_h)` scaling.
//! GeLU uses the tanh approximation `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
//! Layer norm uses `eps = 1e-6` and the biased variance. Everything is computed in
//! f32 with fixed summation order, so NaN and Inf introduced by an injected
//! flip propagate exactly as they would in a plain float32 implementation.
//!
//! All parameters live in one flat `Vec<f32>`; [`Layout`] maps named tensors to
//! ranges of it, which makes every parameter addressable by a single index.

use std::io::{Read, Write};
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;

pub const LAYER_NORM_EPS: f32 = 1e-6;
pub const INIT_STD: f64 = 0.02;
/// Relative distances are clipped to `[-REL_CLIP, REL_CLIP]`.
pub const REL_CLIP: i64 = 8;
const REL_BUCKETS: usize = (2 * REL_CLIP + 1) as usize;

const PARAM_FORMAT: &str = "cled-params";
const PARAM_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("token {token} outside vocabulary of {vocab}")]
    OutOfVocab { token: u32, vocab: usize },
    #[error("sequence length {len} exceeds max_seq_len {max}")]
    TooLong { len: usize, max: usize },
    #[error("parameter index {index} out of range ({count} parameters)")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("parameter file: {0}")]
    Format(String),
    #[error("parameter file: {0}")]
    Io(#[from] std::io::Error),
    #[error("parameter file header: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Opus,
    T5,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub num_layers: usize,
    pub num_heads: usize,
    pub embed_dim: usize,
    /// Hidden width of the feed-forward block.
    pub ff_dim: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// The desk-scale model: 2 layers, 2 heads, width 16, 32 tokens, length 20.
    pub fn toy(variant: Variant, seed: u64) -> Self {
        Self {
            variant,
            num_layers: 2,
            num_heads: 2,
            embed_dim: 16,
            ff_dim: 64,
            vocab_size: 32,
            max_seq_len: 20,
            seed,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.num_layers == 0 {
            return bad("num_layers must be positive");
        }
        if self.num_heads == 0 || self.embed_dim == 0 || self.ff_dim == 0 {
            return bad("num_heads, embed_dim and ff_dim must be positive");
        }
        if self.embed_dim % self.num_heads != 0 {
            return bad("embed_dim must be divisible by num_heads");
        }
        if self.vocab_size < 4 {
            return bad("vocab_size must be at least 4 (pad, bos, eos, unk)");
        }
        if self.max_seq_len == 0 {
            return bad("max_seq_len must be positive");
        }
        Ok(())
    }
}

/// Row-major f32 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    fn push_row(&mut self, row: &[f32]) {
        debug_assert_eq!(row.len(), self.cols);
        self.data.extend_from_slice(row);
        self.rows += 1;
    }
}

/// Kinds of parameter tensors, used for inventories and targeted studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    TokenEmbedding,
    PositionEmbedding,
    Query,
    Key,
    Value,
    Output,
    QueryBias,
    KeyBias,
    ValueBias,
    OutputBias,
    RelativeBias,
    FeedForwardIn,
    FeedForwardGate,
    FeedForwardOut,
    FeedForwardInBias,
    FeedForwardOutBias,
    NormScale,
    NormBias,
    Prediction,
}

impl ParamKind {
    /// Additive bias vectors (linear-map and layer-norm biases). The relative
    /// position table is a learned position term, not a bias vector.
    pub fn is_bias(self) -> bool {
        matches!(
            self,
            ParamKind::QueryBias
                | ParamKind::KeyBias
                | ParamKind::ValueBias
                | ParamKind::OutputBias
                | ParamKind::FeedForwardInBias
                | ParamKind::FeedForwardOutBias
                | ParamKind::NormBias
        )
    }
}

/// A tensor's slot in the flat parameter buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorRef {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl TensorRef {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone)]
pub struct TensorInfo {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: TensorRef,
}

#[derive(Debug, Clone)]
pub struct AttentionWeights {
    /// `W x W`; rows `h*d_h..(h+1)*d_h` are head `h`'s `W_Q^h`.
    pub query: TensorRef,
    pub key: TensorRef,
    pub value: TensorRef,
    pub output: TensorRef,
    pub query_bias: Option<TensorRef>,
    pub key_bias: Option<TensorRef>,
    pub value_bias: Option<TensorRef>,
    pub output_bias: Option<TensorRef>,
    /// `H x (2*REL_CLIP+1)`, T5 self-attention only.
    pub relative_bias: Option<TensorRef>,
}

#[derive(Debug, Clone)]
pub struct FeedForwardWeights {
    /// `F x W`
    pub w_in: TensorRef,
    /// Opus: `W x F` output matrix. T5: `F x W` linear branch of the gate.
    pub w2: TensorRef,
    /// T5 only: `W x F` output matrix.
    pub w_out: Option<TensorRef>,
    pub b_in: Option<TensorRef>,
    pub b_out: Option<TensorRef>,
}

#[derive(Debug, Clone)]
pub struct NormWeights {
    pub scale: TensorRef,
    pub bias: Option<TensorRef>,
}

#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub self_attn: AttentionWeights,
    pub self_norm: NormWeights,
    pub cross_attn: Option<AttentionWeights>,
    pub cross_norm: Option<NormWeights>,
    pub ff: FeedForwardWeights,
    pub ff_norm: NormWeights,
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub token_embedding: TensorRef,
    pub position_embedding: Option<TensorRef>,
    pub encoder: Vec<LayerWeights>,
    pub decoder: Vec<LayerWeights>,
    pub encoder_final_norm: Option<NormWeights>,
    pub decoder_final_norm: Option<NormWeights>,
    pub prediction: TensorRef,
    pub tensors: Vec<TensorInfo>,
    pub param_count: usize,
}

struct LayoutBuilder {
    offset: usize,
    tensors: Vec<TensorInfo>,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, kind: ParamKind, rows: usize, cols: usize) -> TensorRef {
        let t = TensorRef {
            offset: self.offset,
            rows,
            cols,
        };
        self.offset += rows * cols;
        self.tensors.push(TensorInfo {
            name,
            kind,
            tensor: t,
        });
        t
    }

    fn attention(&mut self, p: &str, cfg: &ModelConfig, relative: bool) -> AttentionWeights {
        let w = cfg.embed_dim;
        let opus = cfg.variant == Variant::Opus;
        let query = self.add(format!("{p}.w_q"), ParamKind::Query, w, w);
        let key = self.add(format!("{p}.w_k"), ParamKind::Key, w, w);
        let value = self.add(format!("{p}.w_v"), ParamKind::Value, w, w);
        let output = self.add(format!("{p}.w_o"), ParamKind::Output, w, w);
        let mut bias = |s: &str, k| opus.then(|| self.add(format!("{p}.{s}"), k, 1, w));
        let query_bias = bias("b_q", ParamKind::QueryBias);
        let key_bias = bias("b_k", ParamKind::KeyBias);
        let value_bias = bias("b_v", ParamKind::ValueBias);
        let output_bias = bias("b_o", ParamKind::OutputBias);
        let relative_bias = (relative && !opus).then(|| {
            self.add(
                format!("{p}.rel_bias"),
                ParamKind::RelativeBias,
                cfg.num_heads,
                REL_BUCKETS,
            )
        });
        AttentionWeights {
            query,
            key,
            value,
            output,
            query_bias,
            key_bias,
            value_bias,
            output_bias,
            relative_bias,
        }
    }

    fn ff(&mut self, p: &str, cfg: &ModelConfig) -> FeedForwardWeights {
        let (w, f) = (cfg.embed_dim, cfg.ff_dim);
        match cfg.variant {
            Variant::Opus => {
                let w_in = self.add(format!("{p}.w_f1"), ParamKind::FeedForwardIn, f, w);
                let b_in = self.add(format!("{p}.b_f1"), ParamKind::FeedForwardInBias, 1, f);
                let w2 = self.add(format!("{p}.w_f2"), ParamKind::FeedForwardOut, w, f);
                let b_out = self.add(format!("{p}.b_f2"), ParamKind::FeedForwardOutBias, 1, w);
                FeedForwardWeights {
                    w_in,
                    w2,
                    w_out: None,
                    b_in: Some(b_in),
                    b_out: Some(b_out),
                }
            }
            Variant::T5 => {
                let w_in = self.add(format!("{p}.w_f1"), ParamKind::FeedForwardIn, f, w);
                let w2 = self.add(format!("{p}.w_f2"), ParamKind::FeedForwardGate, f, w);
                let w_out = self.add(format!("{p}.w_fo"), ParamKind::FeedForwardOut, w, f);
                FeedForwardWeights {
                    w_in,
                    w2,
                    w_out: Some(w_out),
                    b_in: None,
                    b_out: None,
                }
            }
        }
    }

    fn norm(&mut self, p: &str, cfg: &ModelConfig) -> NormWeights {
        let w = cfg.embed_dim;
        let scale = self.add(format!("{p}.scale"), ParamKind::NormScale, 1, w);
        let bias = (cfg.variant == Variant::Opus)
            .then(|| self.add(format!("{p}.bias"), ParamKind::NormBias, 1, w));
        NormWeights { scale, bias }
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Layout {
        let mut b = LayoutBuilder {
            offset: 0,
            tensors: Vec::new(),
        };
        let opus = cfg.variant == Variant::Opus;
        let token_embedding = b.add(
            "embed.tokens".into(),
            ParamKind::TokenEmbedding,
            cfg.vocab_size,
            cfg.embed_dim,
        );
        let position_embedding = opus.then(|| {
            b.add(
                "embed.positions".into(),
                ParamKind::PositionEmbedding,
                cfg.max_seq_len,
                cfg.embed_dim,
            )
        });
        let encoder = (0..cfg.num_layers)
            .map(|l| {
                let p = format!("encoder.{l}");
                LayerWeights {
                    self_attn: b.attention(&format!("{p}.self_attn"), cfg, true),
                    self_norm: b.norm(&format!("{p}.self_norm"), cfg),
                    cross_attn: None,
                    cross_norm: None,
                    ff: b.ff(&format!("{p}.ff"), cfg),
                    ff_norm: b.norm(&format!("{p}.ff_norm"), cfg),
                }
            })
            .collect();
        let encoder_final_norm = (!opus).then(|| b.norm("encoder.final_norm", cfg));
        let decoder = (0..cfg.num_layers)
            .map(|l| {
                let p = format!("decoder.{l}");
                LayerWeights {
                    self_attn: b.attention(&format!("{p}.self_attn"), cfg, true),
                    self_norm: b.norm(&format!("{p}.self_norm"), cfg),
                    cross_attn: Some(b.attention(&format!("{p}.cross_attn"), cfg, false)),
                    cross_norm: Some(b.norm(&format!("{p}.cross_norm"), cfg)),
                    ff: b.ff(&format!("{p}.ff"), cfg),
                    ff_norm: b.norm(&format!("{p}.ff_norm"), cfg),
                }
            })
            .collect();
        let decoder_final_norm = (!opus).then(|| b.norm("decoder.final_norm", cfg));
        let prediction = b.add(
            "prediction".into(),
            ParamKind::Prediction,
            cfg.vocab_size,
            cfg.embed_dim,
        );
        Layout {
            token_embedding,
            position_embedding,
            encoder,
            decoder,
            encoder_final_norm,
            decoder_final_norm,
            prediction,
            param_count: b.offset,
            tensors: b.tensors,
        }
    }

    /// The tensor containing a flat index.
    pub fn locate(&self, index: usize) -> Option<&TensorInfo> {
        let i = self
            .tensors
            .partition_point(|t| t.tensor.offset + t.tensor.len() <= index);
        self.tensors.get(i).filter(|t| t.tensor.range().contains(&index))
    }
}

/// GeLU, tanh approximation.
pub fn gelu(x: f32) -> f32 {
    const SQRT_2_OVER_PI: f32 = 0.797_884_6;
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044_715 * x * x * x)).tanh())
}

/// `(x - mean) / sqrt(var + eps) * scale (+ bias)` with the biased variance.
pub fn layer_norm(x: &[f32], scale: &[f32], bias: Option<&[f32]>) -> Vec<f32> {
    let n = x.len() as f32;
    let mean = x.iter().sum::<f32>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
    let denom = (var + LAYER_NORM_EPS).sqrt();
    x.iter()
        .enumerate()
        .map(|(i, v)| {
            let y = (v - mean) / denom * scale[i];
            match bias {
                Some(b) => y + b[i],
                None => y,
            }
        })
        .collect()
}

/// In-place softmax with max subtraction.
pub fn softmax(xs: &mut [f32]) {
    let max = xs.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// Index of the largest logit; the first one wins ties and NaNs never win.
/// An all-NaN row yields `PAD`.
pub fn argmax(logits: &[f32]) -> u32 {
    let mut best: Option<(usize, f32)> = None;
    for (i, &v) in logits.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map_or(PAD, |(i, _)| i as u32)
}

/// Clipped relative distance bucket for key position `key` seen from `query`.
pub fn relative_bucket(query: usize, key: usize) -> usize {
    let d = (key as i64 - query as i64).clamp(-REL_CLIP, REL_CLIP);
    (d + REL_CLIP) as usize
}

/// Cached keys and values of one attention block, one row per position.
#[derive(Debug, Clone)]
struct KvCache {
    keys: Matrix,
    values: Matrix,
}

#[derive(Debug, Clone)]
pub struct MiniTransformer {
    pub config: ModelConfig,
    pub layout: Layout,
    params: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct ParamHeader {
    format: String,
    version: u32,
    config: ModelConfig,
    param_count: usize,
}

impl MiniTransformer {
    /// Gaussian `N(0, 0.02^2)` for every matrix, embedding and bias entry;
    /// layer-norm scales start at `1 + N(0, 0.02^2)`.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut rng = seed::rng(config.seed);
        let mut params = vec![0.0f32; layout.param_count];
        for t in &layout.tensors {
            let offset = if t.kind == ParamKind::NormScale { 1.0 } else { 0.0 };
            for p in &mut params[t.tensor.range()] {
                *p = (offset + normal.sample(&mut rng)) as f32;
            }
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn from_params(config: ModelConfig, params: Vec<f32>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.param_count {
            return Err(ModelError::Format(format!(
                "expected {} parameters, got {}",
                layout.param_count,
                params.len()
            )));
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn get_param(&self, index: usize) -> Result<f32> {
        self.params
            .get(index)
            .copied()
            .ok_or(ModelError::IndexOutOfRange {
                index,
                count: self.params.len(),
            })
    }

    pub fn set_param(&mut self, index: usize, value: f32) -> Result<()> {
        let count = self.params.len();
        match self.params.get_mut(index) {
            Some(p) => {
                *p = value;
                Ok(())
            }
            None => Err(ModelError::IndexOutOfRange { index, count }),
        }
    }

    /// Little-endian bytes of every parameter in flat order.
    pub fn param_bytes(&self) -> Vec<u8> {
        self.params.iter().flat_map(|p| p.to_le_bytes()).collect()
    }

    fn t(&self, t: TensorRef) -> &[f32] {
        &self.params[t.range()]
    }

    /// Writes an 8-byte LE header length, the JSON header, then the raw f32 LE parameters.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = serde_json::to_vec(&ParamHeader {
            format: PARAM_FORMAT.into(),
            version: PARAM_VERSION,
            config: self.config.clone(),
            param_count: self.params.len(),
        })?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&self.param_bytes())?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        if len > 1 << 20 {
            return Err(ModelError::Format("header too large".into()));
        }
        let mut header = vec![0u8; len];
        r.read_exact(&mut header)?;
        let header: ParamHeader = serde_json::from_slice(&header)?;
        if header.format != PARAM_FORMAT || header.version != PARAM_VERSION {
            return Err(ModelError::Format(format!(
                "unsupported format {} v{}",
                header.format, header.version
            )));
        }
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != header.param_count * 4 {
            return Err(ModelError::Format(format!(
                "expected {} parameter bytes, found {}",
                header.param_count * 4,
                bytes.len()
            )));
        }
        let params = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::from_params(header.config, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    // ---- primitives -------------------------------------------------------

    /// `out = x W^T (+ b)` for a single row.
    fn linear_row(&self, x: &[f32], w: TensorRef, b: Option<TensorRef>) -> Vec<f32> {
        let wm = self.t(w);
        let mut out: Vec<f32> = wm
            .chunks_exact(w.cols)
            .map(|row| row.iter().zip(x).fold(0.0f32, |acc, (a, b)| acc + a * b))
            .collect();
        if let Some(b) = b {
            for (o, bv) in out.iter_mut().zip(self.t(b)) {
                *o += bv;
            }
        }
        out
    }

    fn norm_row(&self, x: &[f32], n: &NormWeights) -> Vec<f32> {
        layer_norm(x, self.t(n.scale), n.bias.map(|b| self.t(b)))
    }

    /// One query row attending over cached keys/values `0..keys.rows`.
    fn attend_row(
        &self,
        q: &[f32],
        cache: &KvCache,
        attn: &AttentionWeights,
        query_pos: usize,
    ) -> Vec<f32> {
        let h = self.config.num_heads;
        let dh = self.config.head_dim();
        let n = cache.keys.rows;
        let rel = attn.relative_bias.map(|t| self.t(t));
        let mut concat = vec![0.0f32; self.config.embed_dim];
        let mut scores = vec![0.0f32; n];
        for head in 0..h {
            let span = head * dh..(head + 1) * dh;
            for (j, s) in scores.iter_mut().enumerate() {
                let k = &cache.keys.row(j)[span.clone()];
                let mut dot = q[span.clone()]
                    .iter()
                    .zip(k)
                    .fold(0.0f32, |acc, (a, b)| acc + a * b);
                if let Some(rel) = rel {
                    dot += rel[head * REL_BUCKETS + relative_bucket(query_pos, j)];
                }
                *s = dot;
            }
            softmax(&mut scores);
            let out = &mut concat[span.clone()];
            for (j, p) in scores.iter().enumerate() {
                let v = &cache.values.row(j)[span.clone()];
                for (o, vv) in out.iter_mut().zip(v) {
                    *o += p * vv;
                }
            }
        }
        self.linear_row(&concat, attn.output, attn.output_bias)
    }

    fn kv_cache(&self, memory: &Matrix, attn: &AttentionWeights) -> KvCache {
        let w = self.config.embed_dim;
        let mut keys = Matrix::zeros(0, w);
        let mut values = Matrix::zeros(0, w);
        for r in 0..memory.rows {
            keys.push_row(&self.linear_row(memory.row(r), attn.key, attn.key_bias));
            values.push_row(&self.linear_row(memory.row(r), attn.value, attn.value_bias));
        }
        KvCache { keys, values }
    }

    // ---- sub-layer operations ----------------------------------------------

    /// Multi-head self-attention of the rows of `x`. With `causal`, row `i`
    /// only sees rows `0..=i`.
    pub fn mhsa(&self, x: &Matrix, attn: &AttentionWeights, causal: bool) -> Matrix {
        let full = self.kv_cache(x, attn);
        let mut out = Matrix::zeros(0, self.config.embed_dim);
        for i in 0..x.rows {
            let q = self.linear_row(x.row(i), attn.query, attn.query_bias);
            let row = if causal {
                let visible = KvCache {
                    keys: Matrix {
                        rows: i + 1,
                        cols: full.keys.cols,
                        data: full.keys.data[..(i + 1) * full.keys.cols].to_vec(),
                    },
                    values: Matrix {
                        rows: i + 1,
                        cols: full.values.cols,
                        data: full.values.data[..(i + 1) * full.values.cols].to_vec(),
                    },
                };
                self.attend_row(&q, &visible, attn, i)
            } else {
                self.attend_row(&q, &full, attn, i)
            };
            out.push_row(&row);
        }
        out
    }

    /// Attention of the rows of `x` over an encoder output `memory`.
    pub fn cross_attention(&self, x: &Matrix, memory: &Matrix, attn: &AttentionWeights) -> Matrix {
        let cache = self.kv_cache(memory, attn);
        let mut out = Matrix::zeros(0, self.config.embed_dim);
        for i in 0..x.rows {
            let q = self.linear_row(x.row(i), attn.query, attn.query_bias);
            out.push_row(&self.attend_row(&q, &cache, attn, i));
        }
        out
    }

    fn ff_row(&self, y: &[f32], ff: &FeedForwardWeights) -> Vec<f32> {
        match ff.w_out {
            None => {
                let hidden: Vec<f32> = self
                    .linear_row(y, ff.w_in, ff.b_in)
                    .into_iter()
                    .map(gelu)
                    .collect();
                self.linear_row(&hidden, ff.w2, ff.b_out)
            }
            Some(w_out) => {
                let act = self.linear_row(y, ff.w_in, None);
                let lin = self.linear_row(y, ff.w2, None);
                let hidden: Vec<f32> = act.iter().zip(&lin).map(|(a, l)| gelu(*a) * l).collect();
                self.linear_row(&hidden, w_out, None)
            }
        }
    }

    /// Feed-forward block applied row-wise.
    pub fn ff(&self, y: &Matrix, ff: &FeedForwardWeights) -> Matrix {
        let mut out = Matrix::zeros(0, self.config.embed_dim);
        for r in 0..y.rows {
            out.push_row(&self.ff_row(y.row(r), ff));
        }
        out
    }

    // ---- model ---------------------------------------------------------------

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.len() > self.config.max_seq_len {
            return Err(ModelError::TooLong {
                len: tokens.len(),
                max: self.config.max_seq_len,
            });
        }
        if let Some(&token) = tokens
            .iter()
            .find(|&&t| t as usize >= self.config.vocab_size)
        {
            return Err(ModelError::OutOfVocab {
                token,
                vocab: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn embed_row(&self, token: u32, pos: usize) -> Vec<f32> {
        let w = self.config.embed_dim;
        let emb = &self.t(self.layout.token_embedding)[token as usize * w..(token as usize + 1) * w];
        match self.layout.position_embedding {
            Some(p) => {
                let pe = &self.t(p)[pos * w..(pos + 1) * w];
                emb.iter().zip(pe).map(|(a, b)| a + b).collect()
            }
            None => emb.to_vec(),
        }
    }

    fn residual(a: &[f32], b: &[f32]) -> Vec<f32> {
        a.iter().zip(b).map(|(x, y)| x + y).collect()
    }

    fn encoder_layer(&self, x: &Matrix, layer: &LayerWeights) -> Matrix {
        let w = self.config.embed_dim;
        let mut out = Matrix::zeros(0, w);
        match self.config.variant {
            Variant::Opus => {
                let sa = self.mhsa(x, &layer.self_attn, false);
                for r in 0..x.rows {
                    let y = self.norm_row(&Self::residual(x.row(r), sa.row(r)), &layer.self_norm);
                    let f = self.ff_row(&y, &layer.ff);
                    out.push_row(&self.norm_row(&Self::residual(&y, &f), &layer.ff_norm));
                }
            }
            Variant::T5 => {
                let mut normed = Matrix::zeros(0, w);
                for r in 0..x.rows {
                    normed.push_row(&self.norm_row(x.row(r), &layer.self_norm));
                }
                let sa = self.mhsa(&normed, &layer.self_attn, false);
                for r in 0..x.rows {
                    let y = Self::residual(x.row(r), sa.row(r));
                    let f = self.ff_row(&self.norm_row(&y, &layer.ff_norm), &layer.ff);
                    out.push_row(&Self::residual(&y, &f));
                }
            }
        }
        out
    }

    /// Encoder output, one row per input token.
    pub fn encode(&self, tokens: &[u32]) -> Result<Matrix> {
        self.check_tokens(tokens)?;
        let mut x = Matrix::zeros(0, self.config.embed_dim);
        for (i, &t) in tokens.iter().enumerate() {
            x.push_row(&self.embed_row(t, i));
        }
        for layer in &self.layout.encoder {
            x = self.encoder_layer(&x, layer);
        }
        if let Some(n) = &self.layout.encoder_final_norm {
            for r in 0..x.rows {
                let y = self.norm_row(x.row(r), n);
                x.row_mut(r).copy_from_slice(&y);
            }
        }
        Ok(x)
    }

    /// Greedy decoding: starts from `BOS`, appends the argmax token each step
    /// and stops at `EOS` (not emitted) or after `max_len` tokens.
    pub fn generate(&self, tokens: &[u32], max_len: usize) -> Result<Vec<u32>> {
        if max_len > self.config.max_seq_len {
            return Err(ModelError::TooLong {
                len: max_len,
                max: self.config.max_seq_len,
            });
        }
        if max_len == 0 {
            self.check_tokens(tokens)?;
            return Ok(Vec::new());
        }
        let memory = self.encode(tokens)?;
        Ok(self.generate_from_memory(&memory, max_len))
    }

    /// Greedy decoding against a precomputed encoder output.
    /// `max_len` must not exceed `max_seq_len`.
    pub fn generate_from_memory(&self, memory: &Matrix, max_len: usize) -> Vec<u32> {
        let max_len = max_len.min(self.config.max_seq_len);
        let mut decoder = Decoder::new(self, memory);
        let mut out = Vec::with_capacity(max_len);
        let mut last = BOS;
        for pos in 0..max_len {
            let logits = decoder.step(last, pos);
            let next = argmax(&logits);
            if next == EOS {
                break;
            }
            out.push(next);
            last = next;
        }
        out
    }

    /// Decoder logits for every position of a teacher-forced prefix
    /// (`BOS` followed by `prefix`).
    pub fn decoder_logits(&self, tokens: &[u32], prefix: &[u32]) -> Result<Matrix> {
        self.check_tokens(prefix)?;
        if prefix.len() + 1 > self.config.max_seq_len {
            return Err(ModelError::TooLong {
                len: prefix.len() + 1,
                max: self.config.max_seq_len,
            });
        }
        let memory = self.encode(tokens)?;
        let mut decoder = Decoder::new(self, &memory);
        let mut out = Matrix::zeros(0, self.config.vocab_size);
        for (pos, &t) in std::iter::once(&BOS).chain(prefix).enumerate() {
            out.push_row(&decoder.step(t, pos));
        }
        Ok(out)
    }
}

/// Incremental decoder state: self-attention caches grow by one row per step,
/// cross-attention caches are computed once from the encoder output.
struct Decoder<'m> {
    model: &'m MiniTransformer,
    self_caches: Vec<KvCache>,
    cross_caches: Vec<KvCache>,
}

impl<'m> Decoder<'m> {
    fn new(model: &'m MiniTransformer, memory: &Matrix) -> Self {
        let w = model.config.embed_dim;
        let layers = &model.layout.decoder;
        Self {
            model,
            self_caches: layers
                .iter()
                .map(|_| KvCache {
                    keys: Matrix::zeros(0, w),
                    values: Matrix::zeros(0, w),
                })
                .collect(),
            cross_caches: layers
                .iter()
                .map(|l| model.kv_cache(memory, l.cross_attn.as_ref().expect("decoder layer")))
                .collect(),
        }
    }

    fn self_attend(&mut self, l: usize, x: &[f32], pos: usize) -> Vec<f32> {
        let m = self.model;
        let attn = &m.layout.decoder[l].self_attn;
        let cache = &mut self.self_caches[l];
        cache.keys.push_row(&m.linear_row(x, attn.key, attn.key_bias));
        cache.values.push_row(&m.linear_row(x, attn.value, attn.value_bias));
        let q = m.linear_row(x, attn.query, attn.query_bias);
        m.attend_row(&q, cache, attn, pos)
    }

    fn cross_attend(&self, l: usize, x: &[f32], pos: usize) -> Vec<f32> {
        let m = self.model;
        let attn = m.layout.decoder[l].cross_attn.as_ref().expect("decoder layer");
        let q = m.linear_row(x, attn.query, attn.query_bias);
        m.attend_row(&q, &self.cross_caches[l], attn, pos)
    }

    /// Feeds `token` at position `pos` and returns the next-token logits.
    fn step(&mut self, token: u32, pos: usize) -> Vec<f32> {
        let m = self.model;
        let mut x = m.embed_row(token, pos);
        for l in 0..m.layout.decoder.len() {
            let layer = &m.layout.decoder[l];
            let cross_norm = layer.cross_norm.as_ref().expect("decoder layer");
            x = match m.config.variant {
                Variant::Opus => {
                    let sa = self.self_attend(l, &x, pos);
                    let y1 = m.norm_row(&MiniTransformer::residual(&x, &sa), &layer.self_norm);
                    let ca = self.cross_attend(l, &y1, pos);
                    let y2 = m.norm_row(&MiniTransformer::residual(&y1, &ca), cross_norm);
                    let f = m.ff_row(&y2, &layer.ff);
                    m.norm_row(&MiniTransformer::residual(&y2, &f), &layer.ff_norm)
                }
                Variant::T5 => {
                    let sa = self.self_attend(l, &m.norm_row(&x, &layer.self_norm), pos);
                    let y1 = MiniTransformer::residual(&x, &sa);
                    let ca = self.cross_attend(l, &m.norm_row(&y1, cross_norm), pos);
                    let y2 = MiniTransformer::residual(&y1, &ca);
                    let f = m.ff_row(&m.norm_row(&y2, &layer.ff_norm), &layer.ff);
                    MiniTransformer::residual(&y2, &f)
                }
            };
        }
        if let Some(n) = &m.layout.decoder_final_norm {
            x = m.norm_row(&x, n);
        }
        m.linear_row(&x, m.layout.prediction, None)
    }
}

/// Whitespace vocabulary for rendering toy-model token ids as text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
}

const TOY_WORDS: [&str; 60] = [
    "the", "of", "and", "to", "in", "a", "is", "that", "for", "it", "on", "was", "with", "he",
    "as", "at", "by", "this", "from", "they", "said", "after", "new", "people", "police", "court",
    "government", "year", "two", "city", "president", "world", "first", "state", "officials",
    "told", "will", "would", "over", "more", "report", "school", "home", "family", "team",
    "minister", "week", "country", "news", "attack", "signed", "treaty", "international",
    "criminal", "authority", "palestinian", "wednesday", "last", "million", "election",
];

impl Vocab {
    /// `<pad> <bos> <eos> <unk>` followed by common English words
    /// (padded with `w<id>` beyond the built-in word list).
    pub fn toy(size: usize) -> Self {
        let mut words: Vec<String> = ["<pad>", "<bos>", "<eos>", "<unk>"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for id in 4..size.max(4) {
            words.push(
                TOY_WORDS
                    .get(id - 4)
                    .map_or_else(|| format!("w{id}"), |w| w.to_string()),
            );
        }
        Self { words }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.split_whitespace()
            .map(|w| {
                self.words
                    .iter()
                    .position(|v| v == w)
                    .map_or(UNK, |i| i as u32)
            })
            .collect()
    }

    pub fn decode(&self, tokens: &[u32]) -> String {
        tokens
            .iter()
            .map(|&t| self.words.get(t as usize).map_or("<unk>", String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
