//! Character alphabet and fixed-length text encoding.
//!
//! The symbol order below is frozen: saved models record a hash of it and
//! refuse to load against a different ordering.

use sha2::{Digest, Sha256};

/// Input length in characters.
pub const SEQ_LEN: usize = 120;

/// Letters, digits, 32 punctuation symbols, then space.
const SYMBOLS: &str = "abcdefghijklmnopqrstuvwxyz0123456789-,;.!?:'\"/|_@#$%^&*~`+=<>()[]{}\\ ";

/// Sequence of embedding row indices; `None` marks padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSequence {
    pub indices: Vec<Option<usize>>,
    pub valid_len: usize,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<char>,
    // Direct lookup for ASCII; everything else is unknown.
    ascii: [Option<u8>; 128],
}

impl Default for Alphabet {
    fn default() -> Self {
        Self::build()
    }
}

impl Alphabet {
    pub fn build() -> Self {
        let symbols: Vec<char> = SYMBOLS.chars().collect();
        let mut ascii = [None; 128];
        for (i, &c) in symbols.iter().enumerate() {
            ascii[c as usize] = Some(i as u8);
        }
        Self { symbols, ascii }
    }

    /// Number of known symbols (69).
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn unknown_index(&self) -> usize {
        self.symbols.len()
    }

    /// Embedding rows needed: every symbol plus the unknown row.
    pub fn embedding_rows(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn index(&self, c: char) -> Option<usize> {
        if c.is_ascii() {
            self.ascii[c.to_ascii_lowercase() as usize].map(usize::from)
        } else {
            None
        }
    }

    pub fn symbol(&self, index: usize) -> Option<char> {
        self.symbols.get(index).copied()
    }

    /// Hex SHA-256 of the ordered symbol list.
    pub fn ordering_hash(&self) -> String {
        let s: String = self.symbols.iter().collect();
        hex::encode(Sha256::digest(s.as_bytes()))
    }

    pub fn encode(&self, text: &str) -> EncodedSequence {
        self.encode_to_len(text, SEQ_LEN)
    }

    /// Lower-cases, maps unknown characters to the unknown row, truncates
    /// to `len` characters and pads the rest.
    pub fn encode_to_len(&self, text: &str, len: usize) -> EncodedSequence {
        let mut indices: Vec<Option<usize>> = text
            .chars()
            .take(len)
            .map(|c| Some(self.index(c).unwrap_or(self.unknown_index())))
            .collect();
        let valid_len = indices.len();
        indices.resize(len, None);
        EncodedSequence { indices, valid_len }
    }

    /// Inverse of [`encode`](Self::encode) for in-alphabet text; unknown
    /// positions become U+FFFD.
    pub fn decode(&self, seq: &EncodedSequence) -> String {
        seq.indices
            .iter()
            .take(seq.valid_len)
            .map(|i| i.and_then(|i| self.symbol(i)).unwrap_or('\u{fffd}'))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn alphabet_layout() {
        let a = Alphabet::build();
        assert_eq!(a.len(), 69);
        assert_eq!(a.embedding_rows(), 70);
        assert_eq!(a.index('a'), Some(0));
        assert_eq!(a.index('z'), Some(25));
        assert_eq!(a.index('0'), Some(26));
        assert_eq!(a.index('6'), Some(32));
        assert_eq!(a.index('!'), Some(40));
        assert_eq!(a.index('\\'), Some(67));
        assert_eq!(a.index(' '), Some(68));
        let mut seen = a.symbols().to_vec();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 69);
        assert!(a.symbols().iter().all(|c| !c.is_uppercase()));
    }

    #[test]
    fn encode_examples() {
        let a = Alphabet::build();
        let e = a.encode("Hi!");
        assert_eq!(&e.indices[..3], &[Some(7), Some(8), Some(40)]);
        assert!(e.indices[3..].iter().all(Option::is_none));
        assert_eq!(e.len(), 120);
        assert_eq!(e.valid_len, 3);

        let e = a.encode("€");
        assert_eq!(e.indices[0], Some(69));
        assert_eq!(e.valid_len, 1);

        let long = "x".repeat(150);
        let e = a.encode(&long);
        assert_eq!(e.len(), 120);
        assert_eq!(e.valid_len, 120);

        let e = a.encode("");
        assert_eq!(e.valid_len, 0);
        assert!(e.indices.iter().all(Option::is_none));
    }

    #[test]
    fn ordering_hash_is_stable() {
        assert_eq!(Alphabet::build().ordering_hash(), Alphabet::build().ordering_hash());
        assert_eq!(Alphabet::build().ordering_hash().len(), 64);
    }

    proptest! {
        #[test]
        fn encoding_ignores_case(s in "\\PC{0,140}") {
            let a = Alphabet::build();
            prop_assert_eq!(a.encode(&s), a.encode(&s.to_ascii_lowercase()));
        }

        #[test]
        fn indices_stay_in_range(s in "\\PC{0,140}") {
            let a = Alphabet::build();
            let e = a.encode(&s);
            prop_assert_eq!(e.len(), SEQ_LEN);
            for (pos, i) in e.indices.iter().enumerate() {
                match i {
                    Some(i) => prop_assert!(*i < 70 && pos < e.valid_len),
                    None => prop_assert!(pos >= e.valid_len),
                }
            }
        }

        #[test]
        fn in_alphabet_text_round_trips(s in "[a-z0-9 !?.,;:'\"/|_@#$%^&*~`+=<>()\\[\\]{}\\\\-]{0,120}") {
            let a = Alphabet::build();
            prop_assert_eq!(a.decode(&a.encode(&s)), s);
        }
    }
}
