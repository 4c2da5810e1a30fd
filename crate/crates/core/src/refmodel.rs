// SPDX-License-Identifier: MIT OR Apache-2.0

//! A small seeded decoder-only transformer that emits activation dumps.
//!
//! Architecture: token embedding plus sinusoidal positions, then `n_layers`
//! pre-norm blocks (`x += attn(ln1(x)); x += mlp(ln2(x))`) with causal
//! multi-head attention and a GELU MLP, a final layer norm and an output
//! projection tied to the embedding. Matrices are row-major and applied as
//! `y = x · W`; arithmetic is done in `f64` and stored as `f32` in dumps.
//!
//! Weights come from a ChaCha8 stream seeded with `init_seed`, each drawn
//! uniformly from `[-0.02, 0.02)` in this order: embedding `[vocab][d]`,
//! then per layer `w_q, w_k, w_v, w_o` (`[d][d]`), `w_in` (`[d][d_ff]`),
//! `w_out` (`[d_ff][d]`). Layer norms start at gain 1, bias 0.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{ActivationDump, DumpShape};
use crate::tokenizer::TokenSpan;

const INIT_RANGE: f64 = 0.02;
const LN_EPS: f64 = 1e-5;

fn default_layers() -> usize {
    4
}
fn default_heads() -> usize {
    4
}
fn default_d_model() -> usize {
    64
}
fn default_d_ff() -> usize {
    256
}
fn default_max_seq_len() -> usize {
    512
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefModelConfig {
    #[serde(default = "default_layers")]
    pub n_layers: usize,
    #[serde(default = "default_heads")]
    pub n_heads: usize,
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    #[serde(default = "default_d_ff")]
    pub d_ff: usize,
    /// Usually taken from the tokenizer; zero means "not set yet".
    #[serde(default)]
    pub vocab_size: usize,
    #[serde(default = "default_max_seq_len")]
    pub max_seq_len: usize,
    #[serde(default)]
    pub init_seed: u64,
}

impl Default for RefModelConfig {
    fn default() -> Self {
        Self {
            n_layers: default_layers(),
            n_heads: default_heads(),
            d_model: default_d_model(),
            d_ff: default_d_ff(),
            vocab_size: 0,
            max_seq_len: default_max_seq_len(),
            init_seed: 0,
        }
    }
}

impl RefModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    /// Exact number of parameters, with the output head tied to the embedding.
    pub fn parameter_count(&self) -> usize {
        let d = self.d_model;
        let per_layer = 4 * d * d + 2 * d * self.d_ff + 4 * d;
        self.vocab_size * d + self.n_layers * per_layer + 2 * d
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerNorm {
    fn new(d: usize) -> Self {
        Self {
            gain: vec![1.0; d],
            bias: vec![0.0; d],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        x.iter()
            .zip(self.gain.iter().zip(&self.bias))
            .map(|(v, (g, b))| (v - mean) * inv * g + b)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub w_q: Vec<f64>,
    pub w_k: Vec<f64>,
    pub w_v: Vec<f64>,
    pub w_o: Vec<f64>,
    pub ln2: LayerNorm,
    pub w_in: Vec<f64>,
    pub w_out: Vec<f64>,
}

/// Immutable model; `forward` is safe to call from many threads.
#[derive(Clone, Debug, PartialEq)]
pub struct RefModel {
    config: RefModelConfig,
    pub embedding: Vec<f64>,
    pub blocks: Vec<Block>,
    pub final_norm: LayerNorm,
}

/// Every intermediate the pass records, over all positions.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    /// `hidden[layer][pos]`, layer 0 = embedding output.
    pub hidden: Vec<Vec<Vec<f64>>>,
    /// `attention[layer][head][query][key]`, zero above the diagonal.
    pub attention: Vec<Vec<Vec<Vec<f64>>>>,
    /// Next-token distribution at the last position.
    pub next_token_dist: Vec<f64>,
}

/// `x · W` for a row vector `x` of length `rows` and row-major `W[rows][cols]`.
fn vec_mat(x: &[f64], w: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (xi, row) in x.iter().zip(w.chunks_exact(cols)) {
        for (o, wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
    out
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Sinusoidal position encoding for one position.
pub fn position_encoding(pos: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|i| {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10_000f64.powf(2.0 * pair / d as f64);
            if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

impl RefModel {
    pub fn new(config: RefModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-INIT_RANGE..INIT_RANGE)).collect() };
        let (d, ff) = (config.d_model, config.d_ff);
        let embedding = draw(config.vocab_size * d);
        let blocks = (0..config.n_layers)
            .map(|_| Block {
                ln1: LayerNorm::new(d),
                w_q: draw(d * d),
                w_k: draw(d * d),
                w_v: draw(d * d),
                w_o: draw(d * d),
                ln2: LayerNorm::new(d),
                w_in: draw(d * ff),
                w_out: draw(ff * d),
            })
            .collect();
        Ok(Self {
            final_norm: LayerNorm::new(d),
            config,
            embedding,
            blocks,
        })
    }

    pub fn config(&self) -> &RefModelConfig {
        &self.config
    }

    pub fn parameter_count(&self) -> usize {
        let norm = |n: &LayerNorm| n.gain.len() + n.bias.len();
        self.embedding.len()
            + self
                .blocks
                .iter()
                .map(|b| {
                    norm(&b.ln1)
                        + b.w_q.len()
                        + b.w_k.len()
                        + b.w_v.len()
                        + b.w_o.len()
                        + norm(&b.ln2)
                        + b.w_in.len()
                        + b.w_out.len()
                })
                .sum::<usize>()
            + norm(&self.final_norm)
    }

    /// Full pass over `token_ids`, keeping every intermediate.
    pub fn trace(&self, token_ids: &[u32]) -> Result<ForwardTrace> {
        let cfg = &self.config;
        if token_ids.is_empty() || token_ids.len() > cfg.max_seq_len {
            return Err(Error::Precondition(format!(
                "prompt has {} tokens, allowed 1..={}",
                token_ids.len(),
                cfg.max_seq_len
            )));
        }
        let (d, h) = (cfg.d_model, cfg.n_heads);
        let hd = d / h;
        let scale = 1.0 / (hd as f64).sqrt();
        let n = token_ids.len();

        let mut x: Vec<Vec<f64>> = Vec::with_capacity(n);
        for (pos, &id) in token_ids.iter().enumerate() {
            let id = id as usize;
            if id >= cfg.vocab_size {
                return Err(Error::Precondition(format!(
                    "token id {id} outside vocabulary of {}",
                    cfg.vocab_size
                )));
            }
            let emb = &self.embedding[id * d..(id + 1) * d];
            let pe = position_encoding(pos, d);
            x.push(emb.iter().zip(&pe).map(|(a, b)| a + b).collect());
        }

        let mut hidden = vec![x.clone()];
        let mut attention = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let normed: Vec<Vec<f64>> = x.iter().map(|v| block.ln1.apply(v)).collect();
            let q: Vec<Vec<f64>> = normed.iter().map(|v| vec_mat(v, &block.w_q, d)).collect();
            let k: Vec<Vec<f64>> = normed.iter().map(|v| vec_mat(v, &block.w_k, d)).collect();
            let v: Vec<Vec<f64>> = normed.iter().map(|v| vec_mat(v, &block.w_v, d)).collect();

            let mut heads = vec![vec![vec![0.0; n]; n]; h];
            let mut mixed = vec![vec![0.0; d]; n];
            for (head, weights) in heads.iter_mut().enumerate() {
                let cols = head * hd..(head + 1) * hd;
                for t in 0..n {
                    let scores: Vec<f64> = (0..=t)
                        .map(|s| {
                            q[t][cols.clone()]
                                .iter()
                                .zip(&k[s][cols.clone()])
                                .map(|(a, b)| a * b)
                                .sum::<f64>()
                                * scale
                        })
                        .collect();
                    let probs = softmax(&scores);
                    for (s, &p) in probs.iter().enumerate() {
                        weights[t][s] = p;
                        for (o, vv) in mixed[t][cols.clone()].iter_mut().zip(&v[s][cols.clone()]) {
                            *o += p * vv;
                        }
                    }
                }
            }
            for (xt, m) in x.iter_mut().zip(&mixed) {
                for (a, b) in xt.iter_mut().zip(vec_mat(m, &block.w_o, d)) {
                    *a += b;
                }
            }
            for xt in x.iter_mut() {
                let up: Vec<f64> = vec_mat(&block.ln2.apply(xt), &block.w_in, cfg.d_ff)
                    .into_iter()
                    .map(gelu)
                    .collect();
                for (a, b) in xt.iter_mut().zip(vec_mat(&up, &block.w_out, d)) {
                    *a += b;
                }
            }
            hidden.push(x.clone());
            attention.push(heads);
        }

        let last = self.final_norm.apply(&x[n - 1]);
        let logits: Vec<f64> = self
            .embedding
            .chunks_exact(d)
            .map(|e| e.iter().zip(&last).map(|(a, b)| a * b).sum())
            .collect();
        Ok(ForwardTrace {
            hidden,
            attention,
            next_token_dist: softmax(&logits),
        })
    }

    /// Run a prompt and keep only what a dump stores for `span`.
    pub fn forward(&self, token_ids: &[u32], span: TokenSpan) -> Result<ActivationDump> {
        if span.end() > token_ids.len() {
            return Err(Error::Precondition(format!(
                "span {}..{} outside a {}-token prompt",
                span.start(),
                span.end(),
                token_ids.len()
            )));
        }
        let trace = self.trace(token_ids)?;
        Ok(trace.to_dump(span))
    }
}

impl ForwardTrace {
    pub fn to_dump(&self, span: TokenSpan) -> ActivationDump {
        let n_layers = self.attention.len();
        let n_heads = self.attention.first().map_or(0, Vec::len);
        let d_model = self.hidden[0][0].len();
        let shape = DumpShape {
            n_layers,
            n_heads,
            d_model,
            span_len: span.len(),
            vocab_size: self.next_token_dist.len(),
        };
        let range = span.start()..span.end();
        let hidden = self
            .hidden
            .iter()
            .flat_map(|layer| layer[range.clone()].iter().flatten().map(|&v| v as f32))
            .collect();
        let attn_rows = self
            .attention
            .iter()
            .flat_map(|layer| {
                layer
                    .iter()
                    .flat_map(|head| head[span.t_last()][range.clone()].iter().map(|&v| v as f32))
            })
            .collect();
        let next_token_dist = self.next_token_dist.iter().map(|&v| v as f32).collect();
        ActivationDump::new(shape, hidden, attn_rows, next_token_dist).expect("trace buffers match the derived shape")
    }
}
