//! Synthetic stand-in corpus with a known decision rule.
//!
//! Every example is a handful of random filler words. Hate examples also
//! contain one marker token from a fixed set. Filler words never use the
//! marker letters, so at `noise = 0` the classes are separated by the
//! presence of a marker trigram. With probability `noise` an example of
//! either class additionally carries a decoy: a trigram over the marker
//! letters that is not a marker, which defeats letter-level shortcuts.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Example, Label, Provenance};
use crate::error::{Error, Result};

const FILLER_LETTERS: &[u8] = b"abcdefghilmnoprstu";

/// A family of marker trigrams drawn from a private letter set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MarkerSet {
    pub letters: [u8; 4],
    pub markers: [&'static str; 4],
}

/// Default family, used for the single-domain toy corpus.
pub const MARKERS_A: MarkerSet = MarkerSet {
    letters: *b"qxzj",
    markers: ["qxz", "zjq", "xqj", "jzx"],
};

/// Disjoint family, used as a shifted "second domain".
pub const MARKERS_B: MarkerSet = MarkerSet {
    letters: *b"vwky",
    markers: ["vwk", "ykv", "wyv", "kwy"],
};

impl MarkerSet {
    fn decoy(&self, rng: &mut ChaCha8Rng) -> String {
        loop {
            let s: String = (0..3)
                .map(|_| self.letters[rng.gen_range(0..4)] as char)
                .collect();
            if !self.markers.contains(&s.as_str()) {
                return s;
            }
        }
    }

    /// True when `text` contains a marker as a whole token.
    pub fn contains_marker(&self, text: &str) -> bool {
        text.split(' ').any(|t| self.markers.contains(&t))
    }
}

fn filler_word(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(2..=7);
    (0..len)
        .map(|_| FILLER_LETTERS[rng.gen_range(0..FILLER_LETTERS.len())] as char)
        .collect()
}

fn toy_text(label: Label, noise: f64, markers: &MarkerSet, rng: &mut ChaCha8Rng) -> String {
    let mut words: Vec<String> = (0..rng.gen_range(6..=12)).map(|_| filler_word(rng)).collect();
    if label.is_hate() {
        let m = markers.markers[rng.gen_range(0..markers.markers.len())];
        let at = rng.gen_range(0..=words.len());
        words.insert(at, m.to_string());
    }
    if rng.gen_bool(noise) {
        let at = rng.gen_range(0..=words.len());
        words.insert(at, markers.decoy(rng));
    }
    words.join(" ")
}

/// `n` examples, exactly half of them hate, in shuffled order.
pub fn generate_toy_dataset(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    generate_toy_with(n, noise, seed, &MARKERS_A, Provenance::Gold)
}

pub fn generate_toy_with(
    n: usize,
    noise: f64,
    seed: u64,
    markers: &MarkerSet,
    provenance: Provenance,
) -> Result<Dataset> {
    if n % 2 != 0 {
        return Err(Error::Config(format!("toy dataset size {n} must be even")));
    }
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::Config(format!("toy noise {noise} is not a probability")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples: Vec<Example> = (0..n)
        .map(|i| {
            let label = if i < n / 2 { Label::Hate } else { Label::NonHate };
            Example {
                text: toy_text(label, noise, markers, &mut rng),
                label,
                provenance,
            }
        })
        .collect();
    examples.shuffle(&mut rng);
    Ok(Dataset::new("toy", examples))
}
