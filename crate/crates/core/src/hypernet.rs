//! Auxiliary networks that generate the backbone's convolution kernels.
//!
//! Both variants share the same two-layer generator:
//!
//! ```text
//! o1 = ReLU(W_in · input)              [Z·C_in]
//! O1 = reshape(o1, C_in × Z)           row-major
//! O2 = ReLU(O1 · W_out)                [C_in × k·C_out]
//! kernel = reshape(O2, C_in × k × C_out)
//! ```
//!
//! The static variant feeds a learned per-layer embedding `z_j`. The dynamic
//! variant feeds `[h_backward ; h_forward]`, the final states of one shared
//! bidirectional GRU run over the conv layer's input sequence.

use autodiff::{GruParams, Mode, Tape, Tensor, Var};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::params::{glorot, glorot_matrix, uniform_with_variance, Bound, ParamSet};
use crate::report::ParamReport;

pub const Z1: &str = "aux.z1";
pub const Z2: &str = "aux.z2";
pub const W_IN: &str = "aux.w_in";
pub const W_OUT: &str = "aux.w_out";

const GRU_FWD: [&str; 3] = ["aux.gru_fwd.w_ih", "aux.gru_fwd.w_hh", "aux.gru_fwd.bias"];
const GRU_BWD: [&str; 3] = ["aux.gru_bwd.w_ih", "aux.gru_bwd.w_hh", "aux.gru_bwd.bias"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuxConfig {
    /// Layer-embedding width `Z`.
    pub z_dim: usize,
    /// Units per GRU direction; the context vector has twice this width.
    pub gru_hidden: usize,
    pub recurrent_dropout: f64,
}

impl Default for AuxConfig {
    fn default() -> Self {
        Self {
            z_dim: 10,
            gru_hidden: 32,
            recurrent_dropout: 0.1,
        }
    }
}

/// Generator shape shared by both variants.
#[derive(Clone, Copy, Debug)]
struct Generator {
    w_in: Var,
    w_out: Var,
    c_in: usize,
    z_dim: usize,
    kernel: usize,
    c_out: usize,
}

impl Generator {
    fn new(bound: &Bound, backbone: &BackboneConfig, aux: &AuxConfig) -> Self {
        Self {
            w_in: bound.var(W_IN),
            w_out: bound.var(W_OUT),
            c_in: backbone.channels,
            z_dim: aux.z_dim,
            kernel: backbone.kernel,
            c_out: backbone.channels,
        }
    }

    /// `o1` rows `[B × Z·C_in]` → kernels `[B × C_in × k × C_out]`.
    fn expand(&self, tape: &mut Tape, o1: Var, batch: usize) -> Result<Var> {
        let o1 = tape.reshape(o1, vec![batch * self.c_in, self.z_dim])?;
        let o2 = tape.matmul(o1, self.w_out)?;
        let o2 = tape.relu(o2);
        Ok(tape.reshape(o2, vec![batch, self.c_in, self.kernel, self.c_out])?)
    }
}

// Generator initialisation. Generated kernels pass two ReLUs, so plain
// Glorot draws for W_in and W_out leave them orders of magnitude below the
// scale of a Glorot-initialised conv kernel (and the dynamic variant's
// second-layer kernels smaller still, since its context is read from the
// tiny first-layer output). Both matrices are instead sized by matching
// second moments: W_in gives a unit-variance pre-activation for the
// expected generator input, and W_out then gives ReLU'd kernels the Glorot
// mean square 1/(C·k) of the owned conv kernels.

/// Mean square of the Bi-GRU context on character input at
/// initialisation, measured over toy batches (2.0·10⁻³ ± 0.2 across seeds).
const DYNAMIC_CONTEXT_MEAN_SQUARE: f64 = 2e-3;

fn generator_w_in(rows: usize, input_dim: usize, input_mean_square: f64, rng: &mut dyn RngCore) -> Tensor {
    uniform_with_variance(&[rows, input_dim], 2.0 / (input_dim as f64 * input_mean_square), rng)
}

fn generator_w_out(backbone: &BackboneConfig, aux: &AuxConfig, rng: &mut dyn RngCore) -> Tensor {
    let (k, c) = (backbone.kernel, backbone.channels);
    // E[o₁²] = 1, so pre-activations have variance Z·var; the ReLU halves
    // the mean square, which must come out at 1/(C·k).
    uniform_with_variance(&[aux.z_dim, k * c], 2.0 / (aux.z_dim * c * k) as f64, rng)
}

pub fn static_params(backbone: &BackboneConfig, aux: &AuxConfig, rng: &mut dyn RngCore) -> ParamSet {
    let z = aux.z_dim;
    let c = backbone.channels;
    let mut p = ParamSet::new();
    p.push(Z1, glorot(&[z], 1, z, rng));
    p.push(Z2, glorot(&[z], 1, z, rng));
    // The layer embeddings above are U(±√(6/(1+Z))), mean square 2/(1+Z).
    p.push(W_IN, generator_w_in(z * c, z, 2.0 / (1 + z) as f64, rng));
    p.push(W_OUT, generator_w_out(backbone, aux, rng));
    p
}

pub fn dynamic_params(backbone: &BackboneConfig, aux: &AuxConfig, rng: &mut dyn RngCore) -> ParamSet {
    let (z, c, h) = (aux.z_dim, backbone.channels, aux.gru_hidden);
    let mut p = ParamSet::new();
    for names in [GRU_FWD, GRU_BWD] {
        p.push(names[0], glorot_matrix(c, 3 * h, rng));
        p.push(names[1], glorot_matrix(h, 3 * h, rng));
        p.push(names[2], Tensor::zeros(vec![3 * h]));
    }
    p.push(W_IN, generator_w_in(z * c, 2 * h, DYNAMIC_CONTEXT_MEAN_SQUARE, rng));
    p.push(W_OUT, generator_w_out(backbone, aux, rng));
    p
}

pub fn static_report(backbone: &BackboneConfig, aux: &AuxConfig) -> ParamReport {
    let (z, c) = (aux.z_dim, backbone.channels);
    let mut r = ParamReport::default();
    r.push("aux.layer_embeddings", 2 * z);
    r.push("aux.w_in", z * c * z);
    r.push("aux.w_out", z * backbone.kernel * c);
    r
}

pub fn dynamic_report(backbone: &BackboneConfig, aux: &AuxConfig) -> ParamReport {
    let (z, c, h) = (aux.z_dim, backbone.channels, aux.gru_hidden);
    let mut r = ParamReport::default();
    r.push("aux.bigru", 2 * 3 * (h * (c + h) + h));
    r.push("aux.w_in", z * c * 2 * h);
    r.push("aux.w_out", z * backbone.kernel * c);
    r
}

/// Bound static auxiliary.
pub struct StaticAuxVars {
    z: [Var; 2],
    gen: Generator,
}

impl StaticAuxVars {
    pub fn new(bound: &Bound, backbone: &BackboneConfig, aux: &AuxConfig) -> Self {
        Self {
            z: [bound.var(Z1), bound.var(Z2)],
            gen: Generator::new(bound, backbone, aux),
        }
    }

    /// Kernel `[C_in × k × C_out]` for conv layer `layer` (1 or 2).
    pub fn generate(&self, tape: &mut Tape, layer: usize) -> Result<Var> {
        let z = match layer {
            1 => self.z[0],
            2 => self.z[1],
            _ => return Err(Error::Config(format!("no conv layer {layer}"))),
        };
        let z_col = tape.reshape(z, vec![self.gen.z_dim, 1])?;
        let o1 = tape.matmul(self.gen.w_in, z_col)?;
        let o1 = tape.relu(o1);
        let k = self.gen.expand(tape, o1, 1)?;
        Ok(tape.reshape(k, vec![self.gen.c_in, self.gen.kernel, self.gen.c_out])?)
    }
}

/// Bound dynamic auxiliary.
pub struct DynamicAuxVars {
    forward: GruParams,
    backward: GruParams,
    recurrent_dropout: f64,
    gen: Generator,
}

fn gru_params(bound: &Bound, names: [&str; 3]) -> GruParams {
    GruParams {
        w_ih: bound.var(names[0]),
        w_hh: bound.var(names[1]),
        bias: bound.var(names[2]),
    }
}

impl DynamicAuxVars {
    pub fn new(bound: &Bound, backbone: &BackboneConfig, aux: &AuxConfig) -> Self {
        Self {
            forward: gru_params(bound, GRU_FWD),
            backward: gru_params(bound, GRU_BWD),
            recurrent_dropout: aux.recurrent_dropout,
            gen: Generator::new(bound, backbone, aux),
        }
    }

    /// Context vectors for a conv layer's input: `[L×C]` → `[2h]`, or
    /// `[B×L×C]` → `[B×2h]`.
    pub fn context(&self, tape: &mut Tape, x: Var, mode: Mode, rng: &mut dyn RngCore) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        if shape.last() != Some(&self.gen.c_in) || !(2..=3).contains(&shape.len()) {
            return Err(autodiff::AutodiffError::Dimension {
                op: "dynamic_context",
                left: shape,
                right: vec![self.gen.c_in],
            }
            .into());
        }
        Ok(tape.bigru_final_states(x, self.forward, self.backward, self.recurrent_dropout, mode, rng)?)
    }

    /// Input-conditioned kernels: `[L×C]` → `[C×k×C]`, or `[B×L×C]` →
    /// `[B×C×k×C]` with one kernel per example.
    pub fn generate(&self, tape: &mut Tape, x: Var, mode: Mode, rng: &mut dyn RngCore) -> Result<Var> {
        let batched = tape.value(x).rank() == 3;
        let ctx = self.context(tape, x, mode, rng)?;
        let batch = if batched { tape.value(x).shape()[0] } else { 1 };
        let ctx = tape.reshape(ctx, vec![batch, tape.value(ctx).len() / batch])?;
        let w_in_t = tape.transpose(self.gen.w_in)?;
        let o1 = tape.matmul(ctx, w_in_t)?;
        let o1 = tape.relu(o1);
        let k = self.gen.expand(tape, o1, batch)?;
        if batched {
            Ok(k)
        } else {
            Ok(tape.reshape(k, vec![self.gen.c_in, self.gen.kernel, self.gen.c_out])?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(9)
    }

    #[test]
    fn paper_sized_counts() {
        let b = BackboneConfig::default();
        let a = AuxConfig::default();
        assert_eq!(static_report(&b, &a).total(), 10_900);
        assert_eq!(dynamic_report(&b, &a).total(), 64_064);
        assert_eq!(dynamic_report(&b, &a).get("aux.bigru"), Some(18_624));
        assert_eq!(static_params(&b, &a, &mut rng()).count(), 10_900);
        assert_eq!(dynamic_params(&b, &a, &mut rng()).count(), 64_064);
    }

    #[test]
    fn mini_generator_by_hand() {
        // Z=2, C_in=1, k=1, C_out=2, z=[1,0], W_in=I₂, W_out=I₂ → kernel [1, 0].
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::new(vec![2, 1], vec![1.0, 0.0]).unwrap());
        let eye = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        let gen = Generator {
            w_in: tape.leaf(eye.clone()),
            w_out: tape.leaf(eye),
            c_in: 1,
            z_dim: 2,
            kernel: 1,
            c_out: 2,
        };
        let o1 = tape.matmul(gen.w_in, z).unwrap();
        let o1 = tape.relu(o1);
        let k = gen.expand(&mut tape, o1, 1).unwrap();
        assert_eq!(tape.value(k).shape(), &[1, 1, 1, 2]);
        assert_eq!(tape.value(k).data(), &[1.0, 0.0]);
    }

    #[test]
    fn zero_embedding_gives_zero_kernel() {
        let b = BackboneConfig::default();
        let a = AuxConfig::default();
        let mut p = static_params(&b, &a, &mut rng());
        *p.get_mut(Z1).unwrap() = Tensor::zeros(vec![10]);
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let k = StaticAuxVars::new(&bound, &b, &a).generate(&mut tape, 1).unwrap();
        assert_eq!(tape.value(k).shape(), &[64, 7, 64]);
        assert!(tape.value(k).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn dynamic_context_width_and_errors() {
        let b = BackboneConfig::default();
        let a = AuxConfig::default();
        let p = dynamic_params(&b, &a, &mut rng());
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let aux = DynamicAuxVars::new(&bound, &b, &a);
        for len in [120, 30] {
            let x = tape.leaf(Tensor::filled(vec![len, 64], 0.1));
            let ctx = aux.context(&mut tape, x, Mode::Infer, &mut rng()).unwrap();
            assert_eq!(tape.value(ctx).shape(), &[64]);
            let k = aux.generate(&mut tape, x, Mode::Infer, &mut rng()).unwrap();
            assert_eq!(tape.value(k).shape(), &[64, 7, 64]);
            assert!(tape.value(k).data().iter().all(|&v| v >= 0.0 && v.is_finite()));
        }
        let narrow = tape.leaf(Tensor::zeros(vec![30, 50]));
        assert!(aux.context(&mut tape, narrow, Mode::Infer, &mut rng()).is_err());
    }

    #[test]
    fn zero_gru_gives_zero_kernel() {
        let b = BackboneConfig::default();
        let a = AuxConfig::default();
        let mut p = dynamic_params(&b, &a, &mut rng());
        for name in GRU_FWD.iter().chain(&GRU_BWD) {
            let t = p.get_mut(name).unwrap();
            *t = Tensor::zeros(t.shape().to_vec());
        }
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let aux = DynamicAuxVars::new(&bound, &b, &a);
        let x = tape.leaf(Tensor::filled(vec![2, 120, 64], 0.3));
        let ctx = aux.context(&mut tape, x, Mode::Infer, &mut rng()).unwrap();
        assert!(tape.value(ctx).data().iter().all(|&v| v == 0.0));
        let k = aux.generate(&mut tape, x, Mode::Infer, &mut rng()).unwrap();
        assert_eq!(tape.value(k).shape(), &[2, 64, 7, 64]);
        assert!(tape.value(k).data().iter().all(|&v| v == 0.0));
    }
}
