//! Labelled examples: loading, stratified splitting and augmentation.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    NonHate = 0,
    Hate = 1,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }

    pub fn is_hate(self) -> bool {
        self == Label::Hate
    }

    fn class_name(self) -> &'static str {
        match self {
            Label::Hate => "hate",
            Label::NonHate => "non-hate",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.class_name())
    }
}

impl FromStr for Label {
    type Err = String;

    /// Accepts `0`/`1` and `non-hate`/`hate` (case-insensitive; `_`, space
    /// or no separator are also accepted in `non-hate`).
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "hate" => Ok(Label::Hate),
            "0" | "non-hate" | "nonhate" | "non_hate" | "non hate" => Ok(Label::NonHate),
            other => Err(format!("unparseable label '{other}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    Gold,
    Generated,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub text: String,
    pub label: Label,
    pub provenance: Provenance,
}

impl Example {
    pub fn gold(text: impl Into<String>, label: Label) -> Self {
        Self {
            text: text.into(),
            label,
            provenance: Provenance::Gold,
        }
    }

    pub fn generated(text: impl Into<String>, label: Label) -> Self {
        Self {
            text: text.into(),
            label,
            provenance: Provenance::Generated,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, examples: Vec<Example>) -> Self {
        Self {
            name: name.into(),
            examples,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn hate_count(&self) -> usize {
        self.examples.iter().filter(|e| e.label.is_hate()).count()
    }

    /// Fraction of hate examples; 0 for an empty dataset.
    pub fn hate_fraction(&self) -> f64 {
        if self.examples.is_empty() {
            0.0
        } else {
            self.hate_count() as f64 / self.len() as f64
        }
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.examples.iter().map(|e| e.text.as_str())
    }

    pub fn labels(&self) -> Vec<Label> {
        self.examples.iter().map(|e| e.label).collect()
    }
}

/// Published size and hate share of a public corpus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorpusInfo {
    pub key: &'static str,
    pub source: &'static str,
    pub approx_size: usize,
    pub hate_fraction: f64,
}

pub const CORPORA: [CorpusInfo; 5] = [
    CorpusInfo { key: "DV", source: "Davidson et al. 2017", approx_size: 6_000, hate_fraction: 0.24 },
    CorpusInfo { key: "FN", source: "Founta et al. 2018", approx_size: 53_000, hate_fraction: 0.11 },
    CorpusInfo { key: "WS", source: "Waseem and Hovy 2016", approx_size: 13_000, hate_fraction: 0.15 },
    CorpusInfo { key: "WH", source: "StormFront (de Gibert et al. 2018)", approx_size: 9_600, hate_fraction: 0.11 },
    CorpusInfo { key: "SE", source: "SemEval 2019", approx_size: 10_000, hate_fraction: 0.40 },
];

pub fn corpus_info(key: &str) -> Option<&'static CorpusInfo> {
    CORPORA.iter().find(|c| c.key.eq_ignore_ascii_case(key))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Tsv,
    Jsonl,
}

impl Format {
    /// Guesses from the file extension (`.csv`, `.tsv`, `.jsonl`/`.json`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(Format::Csv),
            "tsv" | "tab" => Some(Format::Tsv),
            "jsonl" | "json" | "ndjson" => Some(Format::Jsonl),
            _ => None,
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "tsv" => Ok(Format::Tsv),
            "jsonl" | "line-json" | "json" => Ok(Format::Jsonl),
            other => Err(Error::Config(format!("unknown format '{other}' (expected csv, tsv or jsonl)"))),
        }
    }
}

/// What to do with a record whose label or text cannot be used.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RecordPolicy {
    /// Skip it and count it.
    #[default]
    Skip,
    /// Stop with a record error.
    FailFast,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Loaded {
    pub dataset: Dataset,
    /// Records rejected under [`RecordPolicy::Skip`].
    pub skipped: usize,
}

/// Loads gold examples. CSV/TSV need a header with `text` and `label`
/// columns; line-JSON needs `text` and `label` keys on every line.
pub fn load_examples(path: &Path, format: Format, policy: RecordPolicy) -> Result<Loaded> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut examples = Vec::new();
    let mut skipped = 0;
    let mut accept = |line: usize, text: &str, label: std::result::Result<Label, String>| -> Result<()> {
        let outcome = match label {
            Ok(_) if text.trim().is_empty() => Err("empty text".to_string()),
            Ok(l) => Ok(l),
            Err(e) => Err(e),
        };
        match (outcome, policy) {
            (Ok(l), _) => examples.push(Example::gold(text, l)),
            (Err(_), RecordPolicy::Skip) => skipped += 1,
            (Err(message), RecordPolicy::FailFast) => {
                return Err(Error::Record {
                    path: path.to_path_buf(),
                    line,
                    message,
                })
            }
        }
        Ok(())
    };

    match format {
        Format::Csv | Format::Tsv => {
            let delimiter = if format == Format::Csv { b',' } else { b'\t' };
            let mut reader = csv::ReaderBuilder::new()
                .delimiter(delimiter)
                .flexible(true)
                .from_path(path)
                .map_err(|e| csv_error(path, e))?;
            let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
            let column = |want: &str| -> Result<usize> {
                headers
                    .iter()
                    .position(|h| h.trim().eq_ignore_ascii_case(want))
                    .ok_or_else(|| Error::Schema {
                        path: path.to_path_buf(),
                        line: 1,
                        message: format!("missing '{want}' column in header"),
                    })
            };
            let (text_col, label_col) = (column("text")?, column("label")?);
            for record in reader.records() {
                let record = record.map_err(|e| csv_error(path, e))?;
                let line = record.position().map_or(0, |p| p.line() as usize);
                let label = record
                    .get(label_col)
                    .ok_or_else(|| "missing label field".to_string())
                    .and_then(Label::from_str);
                let text = record.get(text_col).unwrap_or("");
                accept(line, text, label)?;
            }
        }
        Format::Jsonl => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line_no = i + 1;
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Record {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: e.to_string(),
                })?;
                let (Some(text), Some(label)) = (value.get("text"), value.get("label")) else {
                    return Err(Error::Schema {
                        path: path.to_path_buf(),
                        line: line_no,
                        message: "record lacks a 'text' or 'label' key".into(),
                    });
                };
                let text = text.as_str().unwrap_or("");
                let label = match label {
                    serde_json::Value::String(s) => s.parse(),
                    serde_json::Value::Number(n) => match n.as_f64() {
                        Some(v) if v == 0.0 => Ok(Label::NonHate),
                        Some(v) if v == 1.0 => Ok(Label::Hate),
                        _ => Err(format!("unparseable label {n}")),
                    },
                    other => Err(format!("unparseable label {other}")),
                };
                accept(line_no, text, label)?;
            }
        }
    }
    Ok(Loaded {
        dataset: Dataset::new(name, examples),
        skipped,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Record {
            path: path.to_path_buf(),
            line,
            message: format!("{:?}", kind),
        },
    }
}

/// Splits each class separately: shuffle with `seed`, then
/// `round(train_fraction × class size)` to train and the rest to test.
/// Both outputs keep the input order.
pub fn stratified_split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie strictly between 0 and 1, got {train_fraction}"
        )));
    }
    let mut in_train = vec![false; dataset.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for label in [Label::Hate, Label::NonHate] {
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.examples[i].label == label)
            .collect();
        if members.len() < 2 {
            return Err(Error::DegenerateSplit {
                class: label.class_name(),
                count: members.len(),
            });
        }
        members.shuffle(&mut rng);
        let take = (train_fraction * members.len() as f64).round() as usize;
        for &i in &members[..take] {
            in_train[i] = true;
        }
    }
    let part = |side: bool| {
        Dataset::new(
            dataset.name.clone(),
            dataset
                .examples
                .iter()
                .zip(&in_train)
                .filter(|(_, t)| **t == side)
                .map(|(e, _)| e.clone())
                .collect(),
        )
    };
    Ok((part(true), part(false)))
}

/// Generated-example files and how many records to take from them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AugmentationSpec {
    pub hate_path: Option<PathBuf>,
    pub nonhate_path: Option<PathBuf>,
    /// Total records to add, split evenly: `n/2` per class.
    pub n: usize,
}

impl AugmentationSpec {
    pub fn none() -> Self {
        Self {
            hate_path: None,
            nonhate_path: None,
            n: 0,
        }
    }
}

/// Gold train plus the first `n/2` records of each generated class file.
pub fn merge_augmentation(gold_train: &Dataset, spec: &AugmentationSpec) -> Result<Dataset> {
    if spec.n == 0 {
        return Ok(gold_train.clone());
    }
    if spec.n % 2 != 0 {
        return Err(Error::Config(format!(
            "augmentation size {} must be even to balance the two classes",
            spec.n
        )));
    }
    let per_class = spec.n / 2;
    let mut merged = gold_train.clone();
    for (label, path) in [(Label::Hate, &spec.hate_path), (Label::NonHate, &spec.nonhate_path)] {
        let path = path.as_ref().ok_or_else(|| {
            Error::Config(format!("augmentation of {} needs a generated {label} file", spec.n))
        })?;
        merged.examples.extend(read_generated(path, label, per_class)?);
    }
    Ok(merged)
}

/// First `count` records of a generated file of class `label`. Each line is
/// `text<TAB>class`; a wrong class or a missing tab is a record error.
pub fn read_generated(path: &Path, label: Label, count: usize) -> Result<Vec<Example>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::with_capacity(count);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        if out.len() == count {
            break;
        }
        let line = line.map_err(|e| Error::io(path, e))?;
        let record_error = |message: String| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let (text, class) = line
            .rsplit_once('\t')
            .ok_or_else(|| record_error("expected 'text<TAB>class'".into()))?;
        let class: Label = class.parse().map_err(record_error)?;
        if class != label {
            return Err(record_error(format!("{class} record in a {label} file")));
        }
        out.push(Example::generated(text, class));
    }
    if out.len() < count {
        return Err(Error::Shortfall {
            path: path.to_path_buf(),
            class: label.class_name(),
            requested: count,
            available: out.len(),
        });
    }
    Ok(out)
}

/// Writes examples as `text<TAB>class` lines (`1` hate, `0` non-hate).
/// Tabs and line breaks inside the text become spaces.
pub fn write_generated(path: &Path, examples: &[Example]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in examples {
        let text: String = e
            .text
            .chars()
            .map(|c| if matches!(c, '\t' | '\n' | '\r') { ' ' } else { c })
            .collect();
        writeln!(w, "{text}\t{}", e.label as u8).map_err(|err| Error::io(path, err))?;
    }
    w.flush().map_err(|err| Error::io(path, err))
}

/// Writes gold examples as a CSV file with a `text,label` header.
pub fn write_csv(path: &Path, examples: &[Example]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["text", "label"]).map_err(|e| csv_error(path, e))?;
    for e in examples {
        let label = (e.label as u8).to_string();
        w.write_record([e.text.as_str(), label.as_str()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Concatenation of several datasets under a new name.
pub fn combine(name: impl Into<String>, parts: &[&Dataset]) -> Dataset {
    Dataset::new(
        name,
        parts.iter().flat_map(|d| d.examples.iter().cloned()).collect(),
    )
}
