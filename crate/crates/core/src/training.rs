//! Mini-batch training with Adam, BCE and early stopping.

use std::io::{BufRead, Write};

use autodiff::{AdamConfig, AdamState, Mode, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cnngru::WordVocab;
use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::eval::hate_metrics;
use crate::model::{Model, ModelConfig, ModelKind};
use crate::text::EncodedSequence;

/// Probability clamp used by the loss.
pub const BCE_EPSILON: f64 = 1e-7;

// Independent random streams derived from one run seed.
const STREAM_INIT: u64 = 0;
const STREAM_VALIDATION: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_DROPOUT: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr: f64,
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    /// Decision threshold used for the validation F1.
    pub threshold: f64,
    /// Also re-score the fitting portion in inference mode after every
    /// epoch, filling `EpochRecord::fit_loss` and `EpochRecord::train_f1`.
    #[serde(default)]
    pub track_fit: bool,
    /// Independent initialisations tried; the one reaching the lowest
    /// validation loss is kept. Restart 0 is the plain single run.
    #[serde(default = "one")]
    pub restarts: usize,
}

fn one() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 50,
            lr: 1e-3,
            patience: 3,
            validation_fraction: 0.1,
            seed: 0,
            threshold: 0.5,
            track_fit: false,
            restarts: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return bad(format!(
                "validation fraction must lie in (0, 0.5), got {}",
                self.validation_fraction
            ));
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.restarts == 0 {
            return bad("batch size, epoch count and restarts must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold must lie in (0, 1), got {}", self.threshold));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_f1: f64,
    /// Inference-mode loss on the fitting portion (only with `track_fit`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_loss: Option<f64>,
    /// Inference-mode hate-F1 on the fitting portion (only with `track_fit`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_f1: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch (1-based) with the lowest validation loss; the first on ties.
    pub best_epoch: usize,
}

impl TrainHistory {
    fn push(&mut self, record: EpochRecord) {
        let improved = self
            .best()
            .map_or(true, |best| record.val_loss < best.val_loss);
        self.epochs.push(record);
        if improved {
            self.best_epoch = record.epoch;
        }
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|r| r.epoch == self.best_epoch)
    }

    pub fn val_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|r| r.val_loss).collect()
    }

    /// One JSON object per epoch.
    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for r in &self.epochs {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self> {
        let mut h = TrainHistory::default();
        for line in r.lines() {
            let line = line.map_err(|e| Error::io("<history>", e))?;
            if !line.trim().is_empty() {
                h.push(serde_json::from_str(&line)?);
            }
        }
        Ok(h)
    }
}

/// Mean binary cross-entropy with probabilities clamped to
/// `[ε, 1 − ε]`, `ε = 1e-7`.
pub fn bce_loss(p: &[f64], y: &[f64]) -> Result<f64> {
    if p.len() != y.len() {
        return Err(Error::LengthMismatch {
            predictions: p.len(),
            golds: y.len(),
        });
    }
    if let Some(&bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidLabel(bad));
    }
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&q, &t)| {
            let q = q.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
            -(t * q.ln() + (1.0 - t) * (1.0 - q).ln())
        })
        .sum();
    Ok(total / p.len().max(1) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Stop once none of the last `patience` validation losses is below the
/// best loss recorded before them (ties count as no improvement).
pub fn early_stop_check(val_losses: &[f64], patience: usize) -> StopDecision {
    if val_losses.len() <= patience {
        return StopDecision::Continue;
    }
    let (before, recent) = val_losses.split_at(val_losses.len() - patience);
    let best = before.iter().copied().fold(f64::INFINITY, f64::min);
    if recent.iter().all(|&l| l >= best) {
        StopDecision::Stop
    } else {
        StopDecision::Continue
    }
}

/// Streams of restart `r` sit `STREAMS_PER_RESTART · r` above restart 0's.
const STREAMS_PER_RESTART: u64 = 4;

fn restart_stream(seed: u64, id: u64, restart: usize) -> ChaCha8Rng {
    stream(seed, id + STREAMS_PER_RESTART * restart as u64)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Stratified validation carve: per class `round(fraction × size)`, at
/// least one, and at least one left for training.
fn carve_validation(data: &Dataset, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut is_val = vec![false; data.len()];
    for label in [Label::Hate, Label::NonHate] {
        let mut members: Vec<usize> = (0..data.len()).filter(|&i| data.examples[i].label == label).collect();
        members.shuffle(rng);
        let take = ((fraction * members.len() as f64).round() as usize).clamp(1, members.len() - 1);
        for &i in &members[..take] {
            is_val[i] = true;
        }
    }
    (0..data.len()).partition(|&i| !is_val[i])
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trained {
    pub model: Model,
    /// History of the kept restart.
    pub history: TrainHistory,
    /// Index of the kept restart.
    pub restart: usize,
    /// Best validation loss of every restart, in order.
    pub restart_val_losses: Vec<f64>,
}

/// Trains a fresh model of `config` on `data`.
pub fn train(config: &ModelConfig, data: &Dataset, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    config.validate()?;
    let hate = data.hate_count();
    if hate < 2 || data.len() - hate < 2 {
        return Err(Error::DegenerateData(format!(
            "training needs at least 2 examples of each class; got {hate} hate and {} non-hate",
            data.len() - hate
        )));
    }
    let (train_idx, val_idx) = carve_validation(data, cfg.validation_fraction, &mut stream(cfg.seed, STREAM_VALIDATION));

    let vocab = match config.kind {
        ModelKind::CnnGru => Some(WordVocab::build(
            train_idx.iter().map(|&i| data.examples[i].text.as_str()),
            config.cnngru.min_count,
        )?),
        _ => None,
    };
    let template = Model::new(*config, vocab, &mut stream(cfg.seed, STREAM_INIT))?;
    let encode = |idx: &[usize]| -> (Vec<EncodedSequence>, Vec<f64>) {
        idx.iter()
            .map(|&i| (template.encode(&data.examples[i].text), data.examples[i].label.as_f64()))
            .unzip()
    };
    let split = Split {
        train: encode(&train_idx),
        val: encode(&val_idx),
    };

    let mut kept: Option<(Model, TrainHistory, usize)> = None;
    let mut restart_val_losses = Vec::with_capacity(cfg.restarts);
    for restart in 0..cfg.restarts {
        let model = if restart == 0 {
            template.clone()
        } else {
            Model::new(*config, template.vocab.clone(), &mut restart_stream(cfg.seed, STREAM_INIT, restart))?
        };
        let (model, history) = fit(model, &split, cfg, restart)?;
        let loss = history.best().expect("at least one epoch").val_loss;
        restart_val_losses.push(loss);
        let better = kept
            .as_ref()
            .map_or(true, |(_, h, _)| loss < h.best().expect("at least one epoch").val_loss);
        if better {
            kept = Some((model, history, restart));
        }
    }
    let (model, history, restart) = kept.expect("at least one restart");
    Ok(Trained {
        model,
        history,
        restart,
        restart_val_losses,
    })
}

/// Encoded fitting and validation portions with their targets.
struct Split {
    train: (Vec<EncodedSequence>, Vec<f64>),
    val: (Vec<EncodedSequence>, Vec<f64>),
}

/// One training run from `model`'s initial parameters; returns the model
/// restored to its best-validation-loss epoch.
fn fit(mut model: Model, split: &Split, cfg: &TrainConfig, restart: usize) -> Result<(Model, TrainHistory)> {
    let (train_x, train_y) = &split.train;
    let (val_x, val_y) = &split.val;
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr), &model.params.tensors());
    let mut shuffle_rng = restart_stream(cfg.seed, STREAM_SHUFFLE, restart);
    let mut dropout_rng = restart_stream(cfg.seed, STREAM_DROPOUT, restart);
    let mut history = TrainHistory::default();
    let mut best_params = model.params.clone();
    let mut order: Vec<usize> = (0..train_x.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape);
            let xs: Vec<&EncodedSequence> = batch.iter().map(|&i| &train_x[i]).collect();
            let ys: Vec<f64> = batch.iter().map(|&i| train_y[i]).collect();
            let p = model.forward(&mut tape, &bound, &xs, Mode::Train, &mut dropout_rng)?;
            let loss = tape.binary_cross_entropy(p, &ys, BCE_EPSILON)?;
            let loss_value = tape.value(loss).item().expect("loss is a scalar");
            if !loss_value.is_finite() {
                return Err(Error::NonFinite { what: "training loss", epoch });
            }
            loss_sum += loss_value * batch.len() as f64;
            tape.backward(loss)?;
            let grads: Vec<Tensor> = bound
                .vars()
                .map(|v| tape.grad(v).expect("bound parameters are leaves").clone())
                .collect();
            let mut tensors = model.params.tensors();
            adam.step(&mut tensors, &grads)?;
            model.params.set_tensors(tensors);
        }

        let val_p = model.predict_encoded(val_x)?;
        let val_loss = bce_loss(&val_p, val_y)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite { what: "validation loss", epoch });
        }
        let val_f1 = hate_metrics(&val_p, val_y, cfg.threshold)?.f1;
        let (fit_loss, train_f1) = if cfg.track_fit {
            let fit_p = model.predict_encoded(train_x)?;
            (Some(bce_loss(&fit_p, train_y)?), Some(hate_metrics(&fit_p, train_y, cfg.threshold)?.f1))
        } else {
            (None, None)
        };
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_x.len() as f64,
            val_loss,
            val_f1,
            fit_loss,
            train_f1,
        });
        if history.best_epoch == epoch {
            best_params = model.params.clone();
        }
        if early_stop_check(&history.val_losses(), cfg.patience) == StopDecision::Stop {
            break;
        }
    }
    model.params = best_params;
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::generate_toy_dataset;

    #[test]
    fn bce_examples() {
        assert!((bce_loss(&[0.5], &[1.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce_loss(&[1.0], &[1.0]).unwrap() < 1e-6);
        let v = bce_loss(&[0.9, 0.2], &[1.0, 0.0]).unwrap();
        assert!((v - 0.16425).abs() < 1e-5, "{v}");
        assert!(matches!(bce_loss(&[0.5], &[0.5]), Err(Error::InvalidLabel(_))));
    }

    #[test]
    fn bce_matches_tape_loss_and_gradient() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::vector(vec![0.9, 0.2]));
        let loss = tape.binary_cross_entropy(p, &[1.0, 0.0], BCE_EPSILON).unwrap();
        assert_eq!(tape.value(loss).item().unwrap(), bce_loss(&[0.9, 0.2], &[1.0, 0.0]).unwrap());
        tape.backward(loss).unwrap();
        let g = tape.grad(p).unwrap().data();
        // (p − y) / (p (1 − p)) / N
        assert!((g[0] - (0.9 - 1.0) / (0.9 * 0.1) / 2.0).abs() < 1e-12);
        assert!((g[1] - 0.2 / (0.2 * 0.8) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn early_stopping_examples() {
        assert_eq!(early_stop_check(&[1.0, 0.9, 0.8], 3), StopDecision::Continue);
        assert_eq!(early_stop_check(&[0.8, 0.9, 1.0, 1.1], 3), StopDecision::Stop);
        assert_eq!(early_stop_check(&[0.8, 0.8, 0.8, 0.8], 3), StopDecision::Stop);
        assert_eq!(early_stop_check(&[0.8, 0.9, 0.7, 1.1], 3), StopDecision::Continue);
        assert_eq!(early_stop_check(&[0.5], 1), StopDecision::Continue);
        assert_eq!(early_stop_check(&[0.5, 0.6], 1), StopDecision::Stop);
    }

    #[test]
    fn history_jsonl_roundtrip() {
        let mut h = TrainHistory::default();
        for (i, v) in [0.7, 0.5, 0.5, 0.6].into_iter().enumerate() {
            h.push(EpochRecord { epoch: i + 1, train_loss: 0.1 / 3.0, val_loss: v, val_f1: 0.25, fit_loss: None, train_f1: None });
        }
        assert_eq!(h.best_epoch, 2);
        let mut buf = Vec::new();
        h.write_jsonl(&mut buf).unwrap();
        assert_eq!(TrainHistory::read_jsonl(&buf[..]).unwrap(), h);
        assert!(String::from_utf8(buf).unwrap().starts_with("{\"epoch\":1,\"train_loss\":"));
    }

    #[test]
    fn config_contract() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig { validation_fraction: 0.5, ..ok },
            TrainConfig { validation_fraction: 0.0, ..ok },
            TrainConfig { patience: 0, ..ok },
            TrainConfig { lr: 0.0, ..ok },
            TrainConfig { restarts: 0, ..ok },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn single_class_is_degenerate() {
        let mut d = generate_toy_dataset(20, 0.0, 0).unwrap();
        d.examples.retain(|e| e.label.is_hate());
        let err = train(&ModelConfig::new(ModelKind::Plain), &d, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateData(_)));
    }

    #[test]
    fn patience_one_with_rising_loss_stops_after_two_evaluations() {
        // A learning rate this large makes the validation loss blow up
        // after the first epoch.
        let d = generate_toy_dataset(40, 0.0, 0).unwrap();
        let cfg = TrainConfig { patience: 1, lr: 0.5, max_epochs: 20, ..TrainConfig::default() };
        let t = train(&ModelConfig::new(ModelKind::Plain), &d, &cfg).unwrap();
        let losses = t.history.val_losses();
        let first_rise = losses.windows(2).position(|w| w[1] >= w[0]).unwrap();
        assert_eq!(losses.len(), first_rise + 2);
    }

    #[test]
    fn restored_parameters_reproduce_best_validation_loss() {
        let d = generate_toy_dataset(64, 0.0, 2).unwrap();
        let cfg = TrainConfig { max_epochs: 6, seed: 4, ..TrainConfig::default() };
        let t = train(&ModelConfig::new(ModelKind::Static), &d, &cfg).unwrap();
        let (val_idx, _) = {
            let (tr, va) = carve_validation(&d, cfg.validation_fraction, &mut stream(cfg.seed, STREAM_VALIDATION));
            (va, tr)
        };
        let texts: Vec<&str> = val_idx.iter().map(|&i| d.examples[i].text.as_str()).collect();
        let ys: Vec<f64> = val_idx.iter().map(|&i| d.examples[i].label.as_f64()).collect();
        let p = t.model.predict(&texts).unwrap();
        assert_eq!(bce_loss(&p, &ys).unwrap(), t.history.best().unwrap().val_loss);
    }

    #[test]
    fn restarts_keep_the_lowest_validation_loss_and_extend_the_single_run() {
        let d = generate_toy_dataset(48, 0.0, 6).unwrap();
        let single = TrainConfig { max_epochs: 3, seed: 2, ..TrainConfig::default() };
        let one = train(&ModelConfig::new(ModelKind::Plain), &d, &single).unwrap();
        let three = train(&ModelConfig::new(ModelKind::Plain), &d, &TrainConfig { restarts: 3, ..single }).unwrap();

        assert_eq!(one.restart, 0);
        assert_eq!(one.restart_val_losses, vec![one.history.best().unwrap().val_loss]);
        assert_eq!(three.restart_val_losses.len(), 3);
        assert_eq!(three.restart_val_losses[0], one.restart_val_losses[0], "restart 0 is the single run");
        let losses = &three.restart_val_losses;
        let argmin = (0..3).fold(0, |b, i| if losses[i] < losses[b] { i } else { b });
        assert_eq!(three.restart, argmin);
        assert_eq!(three.history.best().unwrap().val_loss, losses[argmin]);
        assert!(losses[1] != losses[0] && losses[2] != losses[1], "restarts start from distinct initialisations");
        if argmin == 0 {
            assert_eq!(three.model, one.model);
        }
    }
}
