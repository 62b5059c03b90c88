//! Self-describing model file: JSON with a format tag, a version, the model
//! configuration, the alphabet ordering hash, the word vocabulary (baseline
//! only) and every named tensor.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cnngru::WordVocab;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ModelKind};
use crate::params::ParamSet;
use crate::text::Alphabet;

pub const CHECKPOINT_FORMAT: &str = "hyperhate-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    kind: ModelKind,
    config: ModelConfig,
    alphabet_hash: String,
    vocab: Option<Vec<String>>,
    tensors: ParamSet,
}

/// Serialises `model`; equal models give byte-identical output.
pub fn to_json(model: &Model) -> Result<String> {
    let env = Envelope {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        kind: model.kind(),
        config: model.config,
        alphabet_hash: model.alphabet().ordering_hash(),
        vocab: model.vocab.as_ref().map(|v| v.tokens().to_vec()),
        tensors: model.params.clone(),
    };
    Ok(serde_json::to_string(&env)?)
}

pub fn from_json(text: &str) -> Result<Model> {
    // Check the header before trusting the rest of the layout.
    #[derive(Deserialize)]
    struct Header {
        format: String,
        version: u32,
    }
    let header: Header = serde_json::from_str(text)?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::IncompatibleCheckpoint(format!("unknown format tag '{}'", header.format)));
    }
    if header.version > CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            what: "checkpoint",
            found: header.version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let env: Envelope = serde_json::from_str(text)?;
    let expected = Alphabet::build().ordering_hash();
    if env.alphabet_hash != expected {
        return Err(Error::IncompatibleCheckpoint(format!(
            "alphabet hash {} differs from this build's {expected}",
            env.alphabet_hash
        )));
    }
    if env.kind != env.config.kind {
        return Err(Error::IncompatibleCheckpoint(format!(
            "kind '{}' disagrees with configured kind '{}'",
            env.kind, env.config.kind
        )));
    }
    for t in env.tensors.entries() {
        if t.tensor.len() != t.tensor.shape().iter().product::<usize>() || !t.tensor.is_finite() {
            return Err(Error::IncompatibleCheckpoint(format!("tensor '{}' is malformed", t.name)));
        }
    }
    Model::from_parts(env.config, env.tensors, env.vocab.map(WordVocab::from_tokens))
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(model)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(kind: ModelKind) -> Model {
        let vocab = WordVocab::build(["a b c", "a b"], 1).unwrap();
        Model::new(ModelConfig::new(kind), Some(vocab), &mut ChaCha8Rng::seed_from_u64(8)).unwrap()
    }

    #[test]
    fn roundtrip_every_kind() {
        for kind in ModelKind::ALL {
            let m = model(kind);
            let json = to_json(&m).unwrap();
            let back = from_json(&json).unwrap();
            assert_eq!(back.params, m.params, "{kind}");
            assert_eq!(to_json(&back).unwrap(), json);
            let texts = ["a b", "zzz"];
            assert_eq!(back.predict(&texts).unwrap(), m.predict(&texts).unwrap());
        }
    }

    #[test]
    fn newer_version_fails_loudly() {
        let json = to_json(&model(ModelKind::Plain)).unwrap().replacen("\"version\":1", "\"version\":2", 1);
        assert!(matches!(from_json(&json), Err(Error::UnsupportedVersion { found: 2, .. })));
    }

    #[test]
    fn alphabet_mismatch_is_incompatible() {
        let m = model(ModelKind::Static);
        let json = to_json(&m).unwrap().replace(&m.alphabet().ordering_hash(), "00ff");
        assert!(matches!(from_json(&json), Err(Error::IncompatibleCheckpoint(_))));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let m = model(ModelKind::Dynamic);
        save(&m, &p).unwrap();
        assert_eq!(load(&p).unwrap().params, m.params);
    }
}
