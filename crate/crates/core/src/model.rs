//! The four classifier kinds behind one interface.

use std::fmt;
use std::str::FromStr;

use autodiff::{Mode, Tape, Tensor, Var};
use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::{self, BackboneConfig, ConvWeightSource};
use crate::cnngru::{self, CnnGruConfig, WordVocab};
use crate::error::{Error, Result};
use crate::hypernet::{self, AuxConfig, DynamicAuxVars, StaticAuxVars};
use crate::params::{Bound, ParamSet};
use crate::report::ParamReport;
use crate::text::{Alphabet, EncodedSequence};

/// Examples per tape during inference.
const PREDICT_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Plain,
    Static,
    Dynamic,
    #[serde(rename = "cnngru")]
    CnnGru,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Plain, ModelKind::Static, ModelKind::Dynamic, ModelKind::CnnGru];

    /// Command-line spelling.
    pub fn key(self) -> &'static str {
        match self {
            ModelKind::Plain => "plain",
            ModelKind::Static => "static",
            ModelKind::Dynamic => "dynamic",
            ModelKind::CnnGru => "cnngru",
        }
    }

    /// Architecture name used in reports.
    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Plain => "CharCNN",
            ModelKind::Static => "HyperHate-Static",
            ModelKind::Dynamic => "HyperHate-Dynamic",
            ModelKind::CnnGru => "CNN-GRU",
        }
    }

    pub fn is_char_level(self) -> bool {
        self != ModelKind::CnnGru
    }

    /// Totals printed in the original parameter table, where one exists.
    pub fn published_total(self) -> Option<usize> {
        match self {
            ModelKind::Static => Some(76_087),
            ModelKind::Dynamic => Some(129_453),
            _ => None,
        }
    }

    /// Auxiliary-network counts printed in the original parameter table.
    pub fn published_aux(self) -> Option<usize> {
        match self {
            ModelKind::Static => Some(10_954),
            ModelKind::Dynamic => Some(64_320),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "plain" | "charcnn" => Ok(ModelKind::Plain),
            "static" | "hyperhate-static" => Ok(ModelKind::Static),
            "dynamic" | "hyperhate-dynamic" => Ok(ModelKind::Dynamic),
            "cnngru" | "cnn-gru" => Ok(ModelKind::CnnGru),
            other => Err(Error::Config(format!(
                "unknown model kind '{other}' (expected plain, static, dynamic or cnngru)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub backbone: BackboneConfig,
    pub aux: AuxConfig,
    pub cnngru: CnnGruConfig,
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            backbone: BackboneConfig::default(),
            aux: AuxConfig::default(),
            cnngru: CnnGruConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.is_char_level() {
            self.backbone.validate()
        } else {
            self.cnngru.validate()
        }
    }
}

/// A classifier: configuration, learnable tensors and (for the word-level
/// baseline) its vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub vocab: Option<WordVocab>,
    alphabet: Alphabet,
}

impl Model {
    /// Freshly initialised model. The word-level baseline needs `vocab`.
    pub fn new(config: ModelConfig, vocab: Option<WordVocab>, rng: &mut dyn RngCore) -> Result<Self> {
        if config.kind == ModelKind::CnnGru && vocab.is_none() {
            return Err(Error::Config("the cnngru model needs a word vocabulary".into()));
        }
        let rows = vocab.as_ref().map_or(1, WordVocab::embedding_rows);
        let params = init_params(&config, rows, rng);
        Self::from_parts(config, params, vocab)
    }

    /// Reassembles a model from stored tensors, checking names and shapes.
    pub fn from_parts(config: ModelConfig, params: ParamSet, vocab: Option<WordVocab>) -> Result<Self> {
        config.validate()?;
        if config.kind == ModelKind::CnnGru && vocab.is_none() {
            return Err(Error::Config("the cnngru model needs a word vocabulary".into()));
        }
        let rows = vocab.as_ref().map_or(1, WordVocab::embedding_rows);
        let template = init_params(&config, rows, &mut ChaCha8Rng::seed_from_u64(0));
        if template.len() != params.len() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "expected {} tensors, found {}",
                template.len(),
                params.len()
            )));
        }
        for (want, got) in template.entries().iter().zip(params.entries()) {
            if want.name != got.name || want.tensor.shape() != got.tensor.shape() {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "tensor '{}' {:?} does not match expected '{}' {:?}",
                    got.name,
                    got.tensor.shape(),
                    want.name,
                    want.tensor.shape()
                )));
            }
        }
        Ok(Self {
            config,
            params,
            vocab,
            alphabet: Alphabet::build(),
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn encode(&self, text: &str) -> EncodedSequence {
        match &self.vocab {
            Some(v) if self.config.kind == ModelKind::CnnGru => v.encode(text, self.config.cnngru.max_tokens),
            _ => self.alphabet.encode_to_len(text, self.config.backbone.seq_len),
        }
    }

    fn conv_source(&self, bound: &Bound) -> ConvWeightSource {
        let (b, a) = (&self.config.backbone, &self.config.aux);
        match self.config.kind {
            ModelKind::Static => ConvWeightSource::Static(StaticAuxVars::new(bound, b, a)),
            ModelKind::Dynamic => ConvWeightSource::Dynamic(DynamicAuxVars::new(bound, b, a)),
            _ => ConvWeightSource::Owned {
                conv1: bound.var(backbone::CONV1),
                conv2: bound.var(backbone::CONV2),
            },
        }
    }

    /// Hate probabilities `[B]` with parameters already bound on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &[&EncodedSequence],
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::DegenerateData("empty batch".into()));
        }
        match self.config.kind {
            ModelKind::CnnGru => cnngru::forward(tape, &self.config.cnngru, bound, batch, mode, rng),
            _ => {
                let source = self.conv_source(bound);
                backbone::forward(tape, &self.config.backbone, bound, batch, &source, mode, rng)
            }
        }
    }

    /// Inference-mode probabilities for pre-encoded sequences, in order.
    pub fn predict_encoded(&self, seqs: &[EncodedSequence]) -> Result<Vec<f64>> {
        let chunks: Vec<Result<Vec<f64>>> = seqs
            .par_chunks(PREDICT_CHUNK)
            .map(|chunk| {
                let mut tape = Tape::new();
                let bound = self.params.bind(&mut tape);
                let refs: Vec<&EncodedSequence> = chunk.iter().collect();
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let p = self.forward(&mut tape, &bound, &refs, Mode::Infer, &mut rng)?;
                Ok(tape.value(p).data().to_vec())
            })
            .collect();
        let mut out = Vec::with_capacity(seqs.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    /// Inference-mode probabilities for raw texts, in order.
    pub fn predict<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Result<Vec<f64>> {
        let seqs: Vec<EncodedSequence> = texts.iter().map(|t| self.encode(t.as_ref())).collect();
        self.predict_encoded(&seqs)
    }

    /// Inference-mode conv kernels used for `text`, one per layer; `None`
    /// for the word-level baseline.
    pub fn conv_kernels(&self, text: &str) -> Result<Option<[Tensor; 2]>> {
        if !self.config.kind.is_char_level() {
            return Ok(None);
        }
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let seq = self.encode(text);
        let source = self.conv_source(&bound);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = backbone::conv_blocks(
            &mut tape,
            &self.config.backbone,
            &bound,
            &[&seq],
            &source,
            Mode::Infer,
            &mut rng,
        )?;
        let shape = self.config.backbone.conv_shape().to_vec();
        let take = |v: Var| tape.value(v).clone().reshape(shape.clone());
        Ok(Some([take(conv.kernels[0])?, take(conv.kernels[1])?]))
    }

    /// Learnable parameter counts per layer.
    pub fn param_report(&self) -> ParamReport {
        let rows = self.vocab.as_ref().map_or(1, WordVocab::embedding_rows);
        param_report(&self.config, rows)
    }
}

fn init_params(config: &ModelConfig, vocab_rows: usize, rng: &mut dyn RngCore) -> ParamSet {
    let (b, a) = (&config.backbone, &config.aux);
    match config.kind {
        ModelKind::Plain => backbone::init_params(b, true, rng),
        ModelKind::Static => {
            let mut p = backbone::init_params(b, false, rng);
            p.extend(hypernet::static_params(b, a, rng));
            p
        }
        ModelKind::Dynamic => {
            let mut p = backbone::init_params(b, false, rng);
            p.extend(hypernet::dynamic_params(b, a, rng));
            p
        }
        ModelKind::CnnGru => cnngru::init_params(&config.cnngru, vocab_rows, rng),
    }
}

fn param_report(config: &ModelConfig, vocab_rows: usize) -> ParamReport {
    let (b, a) = (&config.backbone, &config.aux);
    match config.kind {
        ModelKind::Plain => backbone::param_report(b, true),
        ModelKind::Static => {
            let mut r = backbone::param_report(b, false);
            r.extend(hypernet::static_report(b, a));
            r
        }
        ModelKind::Dynamic => {
            let mut r = backbone::param_report(b, false);
            r.extend(hypernet::dynamic_report(b, a));
            r
        }
        ModelKind::CnnGru => cnngru::param_report(&config.cnngru, vocab_rows),
    }
}

/// Parameter report for the default configuration of `kind`; the
/// word-level baseline is sized for `vocab_rows` embedding rows.
pub fn default_param_report(kind: ModelKind, vocab_rows: usize) -> ParamReport {
    param_report(&ModelConfig::new(kind), vocab_rows)
}
