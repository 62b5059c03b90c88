//! Word-level CNN-GRU baseline.
//!
//! word embedding → conv(100 filters, k=4, ReLU) → maxpool(4) → GRU(100)
//! over time → global max pool → FC(1) → sigmoid.

use std::collections::HashMap;

use autodiff::{GruOutput, GruParams, Mode, Tape, Tensor, Var};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{glorot, glorot_matrix, Bound, ParamSet};
use crate::report::ParamReport;
use crate::text::EncodedSequence;

pub const EMBEDDING: &str = "word_embedding";
pub const CONV_W: &str = "conv.weight";
pub const CONV_B: &str = "conv.bias";
pub const GRU_W_IH: &str = "gru.w_ih";
pub const GRU_W_HH: &str = "gru.w_hh";
pub const GRU_B: &str = "gru.bias";
pub const FC_W: &str = "fc.weight";
pub const FC_B: &str = "fc.bias";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnGruConfig {
    pub embed_dim: usize,
    pub filters: usize,
    pub kernel: usize,
    pub pool: usize,
    pub hidden: usize,
    pub max_tokens: usize,
    pub min_count: usize,
}

impl Default for CnnGruConfig {
    fn default() -> Self {
        Self {
            embed_dim: 100,
            filters: 100,
            kernel: 4,
            pool: 4,
            hidden: 100,
            max_tokens: 30,
            min_count: 2,
        }
    }
}

impl CnnGruConfig {
    fn pooled_len(&self) -> usize {
        (self.max_tokens + 1).saturating_sub(self.kernel) / self.pool.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pool == 0 || self.max_tokens < self.kernel || self.pooled_len() == 0 {
            return Err(Error::Config(format!(
                "{} tokens cannot pass a width-{} convolution and a pool of {}",
                self.max_tokens, self.kernel, self.pool
            )));
        }
        Ok(())
    }
}

/// Lower-cased tokens split on whitespace and punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| c.is_whitespace() || c.is_ascii_punctuation())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Token index built from training text. Indices `0..len` are known
/// tokens, `len` is the unknown row, and padding has no row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordVocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl WordVocab {
    /// Keeps tokens seen at least `min_count` times, most frequent first
    /// with ties broken alphabetically.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize) -> Result<Self> {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut any = false;
        for text in texts {
            any = true;
            for tok in tokenize(text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        if !any {
            return Err(Error::EmptyCorpus);
        }
        let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self::from_tokens(kept.into_iter().map(|(t, _)| t).collect()))
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unknown_index(&self) -> usize {
        self.tokens.len()
    }

    pub fn embedding_rows(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn encode(&self, text: &str, max_tokens: usize) -> EncodedSequence {
        let mut indices: Vec<Option<usize>> = tokenize(text)
            .iter()
            .take(max_tokens)
            .map(|t| Some(self.get(t).unwrap_or(self.unknown_index())))
            .collect();
        let valid_len = indices.len();
        indices.resize(max_tokens, None);
        EncodedSequence { indices, valid_len }
    }
}

pub fn init_params(cfg: &CnnGruConfig, vocab_rows: usize, rng: &mut dyn RngCore) -> ParamSet {
    let mut p = ParamSet::new();
    p.push(EMBEDDING, glorot_matrix(vocab_rows, cfg.embed_dim, rng));
    p.push(
        CONV_W,
        glorot(
            &[cfg.embed_dim, cfg.kernel, cfg.filters],
            cfg.embed_dim * cfg.kernel,
            cfg.filters * cfg.kernel,
            rng,
        ),
    );
    p.push(CONV_B, Tensor::zeros(vec![cfg.filters]));
    p.push(GRU_W_IH, glorot_matrix(cfg.filters, 3 * cfg.hidden, rng));
    p.push(GRU_W_HH, glorot_matrix(cfg.hidden, 3 * cfg.hidden, rng));
    p.push(GRU_B, Tensor::zeros(vec![3 * cfg.hidden]));
    p.push(FC_W, glorot_matrix(cfg.hidden, 1, rng));
    p.push(FC_B, Tensor::zeros(vec![1]));
    p
}

pub fn param_report(cfg: &CnnGruConfig, vocab_rows: usize) -> ParamReport {
    let mut r = ParamReport::default();
    r.push("word_embedding", vocab_rows * cfg.embed_dim);
    r.push("conv", cfg.embed_dim * cfg.kernel * cfg.filters + cfg.filters);
    r.push("gru", 3 * (cfg.hidden * (cfg.filters + cfg.hidden) + cfg.hidden));
    r.push("fc", cfg.hidden + 1);
    r
}

pub fn forward(
    tape: &mut Tape,
    cfg: &CnnGruConfig,
    params: &Bound,
    batch: &[&EncodedSequence],
    mode: Mode,
    rng: &mut dyn RngCore,
) -> Result<Var> {
    let b = batch.len();
    let rows = tape.value(params.var(EMBEDDING)).shape()[0];
    let mut indices = Vec::with_capacity(b * cfg.max_tokens);
    for seq in batch {
        if seq.len() != cfg.max_tokens {
            return Err(Error::Config(format!(
                "token sequence of length {} given to a model expecting {}",
                seq.len(),
                cfg.max_tokens
            )));
        }
        for idx in &seq.indices {
            if let Some(i) = *idx {
                if i >= rows {
                    return Err(Error::CorruptInput { index: i, rows });
                }
            }
            indices.push(*idx);
        }
    }
    let x = tape.embedding(params.var(EMBEDDING), &indices, &[b, cfg.max_tokens], cfg.embed_dim)?;
    let c = tape.conv1d_valid(x, params.var(CONV_W))?;
    let c = tape.add_bias(c, params.var(CONV_B))?;
    let c = tape.relu(c);
    let pooled = tape.maxpool1d(c, cfg.pool)?;
    let gru = GruParams {
        w_ih: params.var(GRU_W_IH),
        w_hh: params.var(GRU_W_HH),
        bias: params.var(GRU_B),
    };
    let states = tape.gru(pooled, gru, false, GruOutput::Sequence, 0.0, mode, rng)?;
    let steps = tape.value(states).shape()[1];
    let global = tape.maxpool1d(states, steps)?;
    let global = tape.reshape(global, vec![b, cfg.hidden])?;
    let logit = tape.matmul(global, params.var(FC_W))?;
    let logit = tape.add_bias(logit, params.var(FC_B))?;
    let p = tape.sigmoid(logit);
    Ok(tape.reshape(p, vec![b])?)
}
