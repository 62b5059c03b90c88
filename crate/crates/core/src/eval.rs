//! Hate-class metrics, experiment grids and their reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{merge_augmentation, AugmentationSpec, Dataset};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelKind};
use crate::training::{train, TrainConfig};

pub const RESULTS_VERSION: u32 = 1;
const RESULTS_MAGIC: &str = "# hyperhate-results v";
pub const RESULTS_HEADER: &str = "model\tsource\ttarget\tn\tseed\tprecision\trecall\tf1\ttp\tfp\tfn\ttn";
pub const CURVES_HEADER: &str = "model\tsource\ttarget\tn\tseed\tprecision\trecall\tf1";

/// Hate-class precision, recall and F1 with the confusion counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl EvalReport {
    /// Metrics from confusion counts; every ratio with a zero denominator
    /// is 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Self {
            precision,
            recall,
            f1: f1_score(precision, recall),
            tp,
            fp,
            fn_,
            tn,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Scores probabilities against 0/1 gold labels; hate is predicted when
/// `p ≥ threshold`.
pub fn hate_metrics(predictions: &[f64], golds: &[f64], threshold: f64) -> Result<EvalReport> {
    if predictions.len() != golds.len() {
        return Err(Error::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &y) in predictions.iter().zip(golds) {
        let gold = match y {
            v if v == 1.0 => true,
            v if v == 0.0 => false,
            v => return Err(Error::InvalidLabel(v)),
        };
        match (p >= threshold, gold) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(EvalReport::from_counts(tp, fp, fn_, tn))
}

/// One evaluated grid cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub model: ModelKind,
    pub source: String,
    pub target: String,
    /// Generated examples added to the training split.
    pub n: usize,
    pub seed: u64,
    pub report: EvalReport,
}

impl ExperimentRow {
    fn sort_key(&self) -> (ModelKind, &str, &str, usize, u64) {
        (self.model, &self.source, &self.target, self.n, self.seed)
    }
}

/// A dataset with its fixed split and generated-example files.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainData {
    pub name: String,
    pub train: Dataset,
    pub test: Dataset,
    /// Files drawn from when a grid asks for `n > 0`; `n` itself is ignored.
    pub augmentation: AugmentationSpec,
}

/// Which models, augmentation sizes and seeds to run.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub kinds: Vec<ModelKind>,
    pub grid: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Template for every cell; each cell replaces `seed`.
    pub train: TrainConfig,
    /// Maximum concurrently trained cells; 0 means one per core.
    pub workers: usize,
}

impl ExperimentSpec {
    fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() || self.grid.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("an experiment needs at least one model, grid size and seed".into()));
        }
        self.train.validate()
    }
}

struct Cell {
    kind: ModelKind,
    n: usize,
    seed: u64,
}

fn run_cells(source: &DomainData, target: &DomainData, spec: &ExperimentSpec) -> Result<Vec<ExperimentRow>> {
    spec.validate()?;
    let cells: Vec<Cell> = spec
        .kinds
        .iter()
        .flat_map(|&kind| {
            spec.grid
                .iter()
                .flat_map(move |&n| spec.seeds.iter().map(move |&seed| Cell { kind, n, seed }))
        })
        .collect();
    let golds: Vec<f64> = target.test.examples.iter().map(|e| e.label.as_f64()).collect();
    let texts: Vec<&str> = target.test.texts().collect();

    let run = |cell: &Cell| -> Result<ExperimentRow> {
        let wrap = |e: Error| Error::GridCell {
            model: cell.kind.key().to_string(),
            n: cell.n,
            seed: cell.seed,
            source: Box::new(e),
        };
        let aug = AugmentationSpec {
            n: cell.n,
            ..source.augmentation.clone()
        };
        let train_set = merge_augmentation(&source.train, &aug).map_err(wrap)?;
        let cfg = TrainConfig {
            seed: cell.seed,
            ..spec.train
        };
        let trained = train(&ModelConfig::new(cell.kind), &train_set, &cfg).map_err(wrap)?;
        let p = trained.model.predict(&texts).map_err(wrap)?;
        Ok(ExperimentRow {
            model: cell.kind,
            source: source.name.clone(),
            target: target.name.clone(),
            n: cell.n,
            seed: cell.seed,
            report: hate_metrics(&p, &golds, spec.train.threshold).map_err(wrap)?,
        })
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| cells.par_iter().map(run).collect())
}

/// Trains on the dataset's (augmented) train split and tests on its own
/// gold test split. Rows follow the order kinds × grid × seeds.
pub fn run_intra_experiment(data: &DomainData, spec: &ExperimentSpec) -> Result<Vec<ExperimentRow>> {
    run_cells(data, data, spec)
}

/// Trains on `source` and tests on the gold test split of `target`.
pub fn run_cross_experiment(
    source: &DomainData,
    target: &DomainData,
    spec: &ExperimentSpec,
) -> Result<Vec<ExperimentRow>> {
    if source.name == target.name {
        return Err(Error::Misuse(format!(
            "source and target are both '{}'; use the intra-domain runner",
            source.name
        )));
    }
    run_cells(source, target, spec)
}

fn sorted(rows: &[ExperimentRow]) -> Vec<&ExperimentRow> {
    let mut v: Vec<&ExperimentRow> = rows.iter().collect();
    v.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    v
}

/// Versioned results file: a version line, a header, then one
/// tab-separated row per cell sorted by (model, source, target, n, seed).
pub fn format_results(rows: &[ExperimentRow]) -> String {
    let mut out = format!("{RESULTS_MAGIC}{RESULTS_VERSION}\n{RESULTS_HEADER}\n");
    for r in sorted(rows) {
        let m = &r.report;
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{}",
            r.model, r.source, r.target, r.n, r.seed, m.precision, m.recall, m.f1, m.tp, m.fp, m.fn_, m.tn
        )
        .expect("writing to a String cannot fail");
    }
    out
}

/// Parses [`format_results`] output. Metrics are recomputed from the
/// stored confusion counts.
pub fn parse_results(reader: impl BufRead) -> Result<Vec<ExperimentRow>> {
    let path = std::path::PathBuf::from("<results>");
    let err = |line: usize, message: String| Error::Record {
        path: path.clone(),
        line,
        message,
    };
    let mut lines = reader.lines().enumerate();
    let mut next = || -> Result<Option<(usize, String)>> {
        match lines.next() {
            Some((i, l)) => Ok(Some((i + 1, l.map_err(|e| Error::io("<results>", e))?))),
            None => Ok(None),
        }
    };
    let (_, first) = next()?.ok_or_else(|| err(1, "empty results file".into()))?;
    let version: u32 = first
        .strip_prefix(RESULTS_MAGIC)
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| err(1, format!("expected '{RESULTS_MAGIC}N' version line")))?;
    if version > RESULTS_VERSION {
        return Err(Error::UnsupportedVersion {
            what: "results file",
            found: version,
            supported: RESULTS_VERSION,
        });
    }
    match next()? {
        Some((_, h)) if h == RESULTS_HEADER => {}
        _ => {
            return Err(Error::Schema {
                path: path.clone(),
                line: 2,
                message: "missing results header".into(),
            })
        }
    }
    let mut rows = Vec::new();
    while let Some((line_no, line)) = next()? {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 12 {
            return Err(err(line_no, format!("expected 12 fields, found {}", f.len())));
        }
        let num = |i: usize| -> Result<usize> {
            f[i].parse().map_err(|_| err(line_no, format!("bad count '{}'", f[i])))
        };
        rows.push(ExperimentRow {
            model: f[0].parse().map_err(|e: Error| err(line_no, e.to_string()))?,
            source: f[1].to_string(),
            target: f[2].to_string(),
            n: num(3)?,
            seed: f[4].parse().map_err(|_| err(line_no, format!("bad seed '{}'", f[4])))?,
            report: EvalReport::from_counts(num(8)?, num(9)?, num(10)?, num(11)?),
        });
    }
    Ok(rows)
}

/// Plot data: one record per row with n, P, R and F1, sorted by
/// (model, source, target, n, seed).
pub fn emit_curves(rows: &[ExperimentRow]) -> String {
    let mut out = format!("{CURVES_HEADER}\n");
    for r in sorted(rows) {
        let m = &r.report;
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}",
            r.model, r.source, r.target, r.n, r.seed, m.precision, m.recall, m.f1
        )
        .expect("writing to a String cannot fail");
    }
    out
}

/// Order of architectures in the comparison table.
const TABLE_ORDER: [ModelKind; 4] = [ModelKind::CnnGru, ModelKind::Plain, ModelKind::Static, ModelKind::Dynamic];

/// Relative change in percent, signed, two decimals.
pub fn percent_change(baseline: f64, augmented: f64) -> String {
    if baseline == 0.0 {
        "n/a".into()
    } else {
        format!("{:+.2}", (augmented - baseline) / baseline * 100.0)
    }
}

/// Baseline-vs-augmented comparison table: one block of Prec./Recall/F1
/// lines per architecture and, per dataset (or `source-target` pair), the
/// columns Baseline (n = 0), Augmented (largest n) and (%) change. Values
/// are means over seeds.
pub fn tables_report(rows: &[ExperimentRow]) -> String {
    let column = |r: &ExperimentRow| {
        if r.source == r.target {
            r.source.clone()
        } else {
            format!("{}-{}", r.source, r.target)
        }
    };
    let pairs: std::collections::BTreeSet<(&str, &str)> =
        rows.iter().map(|r| (r.source.as_str(), r.target.as_str())).collect();
    let columns: Vec<String> = pairs
        .into_iter()
        .map(|(s, t)| if s == t { s.to_string() } else { format!("{s}-{t}") })
        .collect();
    // (model, column, n) → (P, R, F1) sums and count.
    let mut acc: BTreeMap<(ModelKind, String, usize), ([f64; 3], usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry((r.model, column(r), r.n)).or_insert(([0.0; 3], 0));
        e.0[0] += r.report.precision;
        e.0[1] += r.report.recall;
        e.0[2] += r.report.f1;
        e.1 += 1;
    }
    let mean = |model: ModelKind, col: &str, n: usize| {
        acc.get(&(model, col.to_string(), n))
            .map(|(s, c)| s.map(|v| v / *c as f64))
    };
    let largest_n = |model: ModelKind, col: &str| {
        acc.keys()
            .filter(|(m, c, n)| *m == model && c == col && *n > 0)
            .map(|(_, _, n)| *n)
            .max()
    };

    let mut out = String::from("architecture\tmetric");
    for c in &columns {
        write!(out, "\t{c} baseline\t{c} augmented\t{c} (%)").expect("string write");
    }
    out.push('\n');
    for model in TABLE_ORDER {
        if !rows.iter().any(|r| r.model == model) {
            continue;
        }
        for (m, metric) in ["Prec.", "Recall", "F1"].iter().enumerate() {
            let name = if m == 0 { model.display_name() } else { "" };
            write!(out, "{name}\t{metric}").expect("string write");
            for c in &columns {
                let base = mean(model, c, 0).map(|v| v[m]);
                let aug = largest_n(model, c).and_then(|n| mean(model, c, n)).map(|v| v[m]);
                let cell = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
                let pct = match (base, aug) {
                    (Some(b), Some(a)) => percent_change(b, a),
                    _ => "-".into(),
                };
                write!(out, "\t{}\t{}\t{pct}", cell(base), cell(aug)).expect("string write");
            }
            out.push('\n');
        }
    }
    out
}
