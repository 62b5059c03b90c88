//! Character-level CNN main network.
//!
//! embedding → [conv(k) → ReLU → maxpool]×2 → FC → ReLU → dropout → FC →
//! ReLU → dropout → FC → sigmoid. The two convolution kernels either belong
//! to the network or are produced by an auxiliary network.

use autodiff::{Mode, Tape, Var};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypernet::{DynamicAuxVars, StaticAuxVars};
use crate::params::{glorot, glorot_matrix, Bound, ParamSet};
use crate::report::ParamReport;
use crate::text::EncodedSequence;

pub const EMBEDDING: &str = "embedding";
pub const CONV1: &str = "conv1";
pub const CONV2: &str = "conv2";
pub const FC1_W: &str = "fc1.weight";
pub const FC1_B: &str = "fc1.bias";
pub const FC2_W: &str = "fc2.weight";
pub const FC2_B: &str = "fc2.bias";
pub const FC3_W: &str = "fc3.weight";
pub const FC3_B: &str = "fc3.bias";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub vocab_rows: usize,
    pub embed_dim: usize,
    pub seq_len: usize,
    pub kernel: usize,
    /// Input and output width of both convolution layers.
    pub channels: usize,
    pub pool: usize,
    pub fc1: usize,
    pub fc2: usize,
    pub dropout: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            vocab_rows: 70,
            embed_dim: 50,
            seq_len: 120,
            kernel: 7,
            channels: 64,
            pool: 4,
            fc1: 128,
            fc2: 32,
            dropout: 0.5,
        }
    }
}

impl BackboneConfig {
    /// Sequence length after both pooling stages.
    pub fn pooled_len(&self) -> usize {
        self.seq_len / self.pool / self.pool
    }

    pub fn flatten_dim(&self) -> usize {
        self.pooled_len() * self.channels
    }

    pub fn conv_shape(&self) -> [usize; 3] {
        [self.channels, self.kernel, self.channels]
    }

    pub fn conv_len(&self) -> usize {
        self.channels * self.kernel * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel width {} must be odd", self.kernel)));
        }
        if self.embed_dim > self.channels {
            return Err(Error::Config(format!(
                "embedding width {} exceeds convolution width {}",
                self.embed_dim, self.channels
            )));
        }
        if self.pool == 0 || self.pooled_len() == 0 {
            return Err(Error::Config(format!(
                "sequence length {} does not survive two pools of {}",
                self.seq_len, self.pool
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Parameters shared by every variant: embedding and the three FC layers,
/// plus both kernels when `owned_convs` is set.
pub fn init_params(cfg: &BackboneConfig, owned_convs: bool, rng: &mut dyn RngCore) -> ParamSet {
    let mut p = ParamSet::new();
    p.push(EMBEDDING, glorot_matrix(cfg.vocab_rows, cfg.embed_dim, rng));
    if owned_convs {
        let fan = cfg.channels * cfg.kernel;
        p.push(CONV1, glorot(&cfg.conv_shape(), fan, fan, rng));
        p.push(CONV2, glorot(&cfg.conv_shape(), fan, fan, rng));
    }
    let flat = cfg.flatten_dim();
    p.push(FC1_W, glorot_matrix(flat, cfg.fc1, rng));
    p.push(FC1_B, autodiff::Tensor::zeros(vec![cfg.fc1]));
    p.push(FC2_W, glorot_matrix(cfg.fc1, cfg.fc2, rng));
    p.push(FC2_B, autodiff::Tensor::zeros(vec![cfg.fc2]));
    p.push(FC3_W, glorot_matrix(cfg.fc2, 1, rng));
    p.push(FC3_B, autodiff::Tensor::zeros(vec![1]));
    p
}

pub fn param_report(cfg: &BackboneConfig, owned_convs: bool) -> ParamReport {
    let mut r = ParamReport::default();
    r.push("embedding", cfg.vocab_rows * cfg.embed_dim);
    if owned_convs {
        r.push("conv1", cfg.conv_len());
        r.push("conv2", cfg.conv_len());
    }
    r.push("fc1", cfg.flatten_dim() * cfg.fc1 + cfg.fc1);
    r.push("fc2", cfg.fc1 * cfg.fc2 + cfg.fc2);
    r.push("fc3", cfg.fc2 + 1);
    r
}

/// Where the two convolution kernels come from.
pub enum ConvWeightSource {
    Owned { conv1: Var, conv2: Var },
    Static(StaticAuxVars),
    Dynamic(DynamicAuxVars),
}

impl ConvWeightSource {
    /// Kernel for conv layer `layer` (1 or 2) given that layer's input.
    fn weights(
        &self,
        tape: &mut Tape,
        layer: usize,
        input: Var,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        match self {
            ConvWeightSource::Owned { conv1, conv2 } => Ok(if layer == 1 { *conv1 } else { *conv2 }),
            ConvWeightSource::Static(aux) => aux.generate(tape, layer),
            ConvWeightSource::Dynamic(aux) => aux.generate(tape, input, mode, rng),
        }
    }
}

/// Embeds a batch into `[B×L×C]`: each index takes its embedding row, pads
/// take zeros, and channels past the embedding width are zero.
pub fn embed_and_pad(
    tape: &mut Tape,
    cfg: &BackboneConfig,
    params: &Bound,
    batch: &[&EncodedSequence],
) -> Result<Var> {
    let indices = batch_indices(cfg, batch)?;
    Ok(tape.embedding(
        params.var(EMBEDDING),
        &indices,
        &[batch.len(), cfg.seq_len],
        cfg.channels,
    )?)
}

/// Flattened `[B×L]` row indices, validated against the configuration.
fn batch_indices(cfg: &BackboneConfig, batch: &[&EncodedSequence]) -> Result<Vec<Option<usize>>> {
    let mut indices = Vec::with_capacity(batch.len() * cfg.seq_len);
    for seq in batch {
        if seq.len() != cfg.seq_len {
            return Err(Error::Config(format!(
                "sequence of length {} given to a model expecting {}",
                seq.len(),
                cfg.seq_len
            )));
        }
        for idx in &seq.indices {
            if let Some(i) = *idx {
                if i >= cfg.vocab_rows {
                    return Err(Error::CorruptInput {
                        index: i,
                        rows: cfg.vocab_rows,
                    });
                }
            }
            indices.push(*idx);
        }
    }
    Ok(indices)
}

fn dense(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    Ok(tape.add_bias(xw, b)?)
}

/// Output of the two convolution blocks together with the kernels used.
pub struct ConvFeatures {
    pub kernels: [Var; 2],
    /// `[B × pooled_len × channels]`.
    pub features: Var,
}

/// Embedding and both convolution blocks.
pub fn conv_blocks(
    tape: &mut Tape,
    cfg: &BackboneConfig,
    params: &Bound,
    batch: &[&EncodedSequence],
    source: &ConvWeightSource,
    mode: Mode,
    rng: &mut dyn RngCore,
) -> Result<ConvFeatures> {
    // The first layer fuses embedding lookup and convolution; the embedded
    // input itself is only materialised when the kernel generator reads it.
    let indices = batch_indices(cfg, batch)?;
    let lead = [batch.len(), cfg.seq_len];
    let table = params.var(EMBEDDING);
    let w1 = match source {
        ConvWeightSource::Dynamic(aux) => {
            let x1 = tape.embedding(table, &indices, &lead, cfg.channels)?;
            aux.generate(tape, x1, mode, rng)?
        }
        _ => source.weights(tape, 1, table, mode, rng)?,
    };
    let c1 = tape.embedding_conv1d_same(table, &indices, &lead, cfg.channels, w1)?;
    let r1 = tape.relu(c1);
    let x2 = tape.maxpool1d(r1, cfg.pool)?;
    let w2 = source.weights(tape, 2, x2, mode, rng)?;
    let c2 = tape.conv1d_same(x2, w2)?;
    let r2 = tape.relu(c2);
    let features = tape.maxpool1d(r2, cfg.pool)?;
    Ok(ConvFeatures {
        kernels: [w1, w2],
        features,
    })
}

/// Hate probabilities `[B]` for a batch.
pub fn forward(
    tape: &mut Tape,
    cfg: &BackboneConfig,
    params: &Bound,
    batch: &[&EncodedSequence],
    source: &ConvWeightSource,
    mode: Mode,
    rng: &mut dyn RngCore,
) -> Result<Var> {
    let b = batch.len();
    let conv = conv_blocks(tape, cfg, params, batch, source, mode, rng)?;
    let flat = tape.reshape(conv.features, vec![b, cfg.flatten_dim()])?;

    let h1 = dense(tape, flat, params.var(FC1_W), params.var(FC1_B))?;
    let h1 = tape.relu(h1);
    let h1 = tape.dropout(h1, cfg.dropout, mode, rng)?;
    let h2 = dense(tape, h1, params.var(FC2_W), params.var(FC2_B))?;
    let h2 = tape.relu(h2);
    let h2 = tape.dropout(h2, cfg.dropout, mode, rng)?;
    let logit = dense(tape, h2, params.var(FC3_W), params.var(FC3_B))?;
    let p = tape.sigmoid(logit);
    Ok(tape.reshape(p, vec![b])?)
}
