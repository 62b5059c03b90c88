//! Subcommand definitions and their implementations.

use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use hyperhate::{checkpoint, hypernet};
use hyperhate::data::{
    load_examples, merge_augmentation, stratified_split, write_csv, write_generated, AugmentationSpec, Format,
    RecordPolicy,
};
use hyperhate::eval::{
    emit_curves, format_results, run_cross_experiment, run_intra_experiment, tables_report, DomainData, ExperimentSpec,
};
use hyperhate::model::default_param_report;
use hyperhate::report::thousands;
use hyperhate::toy::{generate_toy_with, MARKERS_A, MARKERS_B};
use hyperhate::{hate_metrics, train, Dataset, Label, ModelConfig, ModelKind, Provenance, TrainConfig};

use crate::config::{ConfigFile, RunConfig};
use crate::UsageError;

/// Fraction of a user-supplied corpus kept for training by `experiment --data`.
pub const TRAIN_SPLIT: f64 = 0.8;
/// Embedding rows assumed by `params --model cnngru` without `--vocab-rows`.
pub const DEFAULT_WORD_ROWS: usize = 20_001;

#[derive(Parser, Debug)]
#[command(name = "hyperhate", version, about = "Character-level HyperNetwork hate-speech classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one model; writes model.json, history.jsonl and run_config.txt.
    Train(TrainArgs),
    /// Score a checkpoint on a labelled file.
    Eval(EvalArgs),
    /// Print a probability and label per input text.
    Predict(PredictArgs),
    /// Print the per-layer parameter breakdown of a model kind.
    Params(ParamsArgs),
    /// Run an augmentation grid; writes results, tables and curves files.
    Experiment(ExperimentArgs),
    /// Write a synthetic toy dataset.
    GenToy(GenToyArgs),
}

#[derive(Args, Debug)]
pub struct ConfigArg {
    /// Flat key=value file consulted for settings not given as flags or env vars.
    #[arg(long, env = "HYPERHATE_CONFIG")]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainOpts {
    #[arg(long, env = "HYPERHATE_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "HYPERHATE_LR")]
    pub lr: Option<f64>,
    /// Maximum number of epochs.
    #[arg(long, env = "HYPERHATE_EPOCHS")]
    pub epochs: Option<usize>,
    /// Early-stopping patience in epochs.
    #[arg(long, env = "HYPERHATE_PATIENCE")]
    pub patience: Option<usize>,
    /// Decision threshold on the hate probability.
    #[arg(long, env = "HYPERHATE_THRESHOLD")]
    pub threshold: Option<f64>,
    #[arg(long, env = "HYPERHATE_BATCH_SIZE")]
    pub batch_size: Option<usize>,
    #[arg(long, env = "HYPERHATE_VALIDATION_FRACTION")]
    pub validation_fraction: Option<f64>,
    /// Independent initialisations; the lowest validation loss is kept.
    #[arg(long, env = "HYPERHATE_RESTARTS")]
    pub restarts: Option<usize>,
}

const TRAIN_KEYS: [&str; 8] =
    ["seed", "lr", "epochs", "patience", "threshold", "batch-size", "validation-fraction", "restarts"];

impl TrainOpts {
    fn resolve(&self, file: &ConfigFile, rc: &mut RunConfig) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            seed: file.pick_or(self.seed, "seed", d.seed)?,
            lr: file.pick_or(self.lr, "lr", d.lr)?,
            max_epochs: file.pick_or(self.epochs, "epochs", d.max_epochs)?,
            patience: file.pick_or(self.patience, "patience", d.patience)?,
            threshold: file.pick_or(self.threshold, "threshold", d.threshold)?,
            batch_size: file.pick_or(self.batch_size, "batch-size", d.batch_size)?,
            validation_fraction: file.pick_or(self.validation_fraction, "validation-fraction", d.validation_fraction)?,
            track_fit: d.track_fit,
            restarts: file.pick_or(self.restarts, "restarts", d.restarts)?,
        };
        cfg.validate()?;
        rc.set("seed", cfg.seed);
        rc.set("lr", cfg.lr);
        rc.set("epochs", cfg.max_epochs);
        rc.set("patience", cfg.patience);
        rc.set("threshold", cfg.threshold);
        rc.set("batch-size", cfg.batch_size);
        rc.set("validation-fraction", cfg.validation_fraction);
        rc.set("restarts", cfg.restarts);
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct AugOpts {
    /// Generated hate examples, one `text<TAB>class` record per line.
    #[arg(long, env = "HYPERHATE_AUG_HATE")]
    pub aug_hate: Option<PathBuf>,
    /// Generated non-hate examples, same format.
    #[arg(long, env = "HYPERHATE_AUG_NONHATE")]
    pub aug_nonhate: Option<PathBuf>,
    /// Total generated examples to add (half per class).
    #[arg(long, env = "HYPERHATE_AUG_N")]
    pub aug_n: Option<usize>,
}

const AUG_KEYS: [&str; 3] = ["aug-hate", "aug-nonhate", "aug-n"];

impl AugOpts {
    fn resolve(&self, file: &ConfigFile, rc: &mut RunConfig, default_n: usize) -> Result<AugmentationSpec> {
        let spec = AugmentationSpec {
            hate_path: file.pick(self.aug_hate.clone(), "aug-hate")?,
            nonhate_path: file.pick(self.aug_nonhate.clone(), "aug-nonhate")?,
            n: file.pick_or(self.aug_n, "aug-n", default_n)?,
        };
        if let Some(p) = &spec.hate_path {
            rc.set("aug-hate", p.display());
        }
        if let Some(p) = &spec.nonhate_path {
            rc.set("aug-nonhate", p.display());
        }
        rc.set("aug-n", spec.n);
        Ok(spec)
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// plain | static | dynamic | cnngru
    #[arg(long, env = "HYPERHATE_MODEL")]
    pub model: Option<String>,
    /// Labelled training file (.csv, .tsv or .jsonl).
    #[arg(long, env = "HYPERHATE_TRAIN")]
    pub train: Option<PathBuf>,
    #[command(flatten)]
    pub aug: AugOpts,
    #[command(flatten)]
    pub opts: TrainOpts,
    /// Output directory.
    #[arg(long, env = "HYPERHATE_OUT")]
    pub out: Option<PathBuf>,
    /// Stop at the first unusable record instead of skipping it.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, env = "HYPERHATE_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    /// Labelled test file.
    #[arg(long, env = "HYPERHATE_TEST")]
    pub test: Option<PathBuf>,
    #[arg(long, env = "HYPERHATE_THRESHOLD")]
    pub threshold: Option<f64>,
    /// Optional output directory for eval.json and run_config.txt.
    #[arg(long, env = "HYPERHATE_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub strict: bool,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, env = "HYPERHATE_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, env = "HYPERHATE_THRESHOLD")]
    pub threshold: Option<f64>,
    /// File with one text per line; without it and without TEXT arguments,
    /// lines are read from standard input.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Texts to classify.
    pub texts: Vec<String>,
}

#[derive(Args, Debug)]
pub struct ParamsArgs {
    #[arg(long, env = "HYPERHATE_MODEL")]
    pub model: String,
    /// Word-embedding rows assumed for the cnngru baseline.
    #[arg(long, default_value_t = DEFAULT_WORD_ROWS)]
    pub vocab_rows: usize,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Comma-separated model kinds, or `all`.
    #[arg(long, env = "HYPERHATE_MODEL")]
    pub model: Option<String>,
    /// Whole source corpus, split 80/20 (stratified, `--split-seed`).
    #[arg(long, env = "HYPERHATE_DATA")]
    pub data: Option<PathBuf>,
    /// Source training split (instead of `--data`).
    #[arg(long, env = "HYPERHATE_TRAIN")]
    pub train: Option<PathBuf>,
    /// Source test split (instead of `--data`).
    #[arg(long, env = "HYPERHATE_TEST")]
    pub test: Option<PathBuf>,
    /// Source name used in result rows; defaults to the file stem.
    #[arg(long)]
    pub name: Option<String>,
    /// Whole target corpus for a cross-domain run (its 80/20 test part is used).
    #[arg(long, env = "HYPERHATE_TARGET_DATA")]
    pub target_data: Option<PathBuf>,
    /// Target test split for a cross-domain run.
    #[arg(long, env = "HYPERHATE_TARGET_TEST")]
    pub target_test: Option<PathBuf>,
    #[arg(long)]
    pub target_name: Option<String>,
    #[command(flatten)]
    pub aug: AugOpts,
    /// Comma-separated augmentation sizes.
    #[arg(long, env = "HYPERHATE_GRID")]
    pub grid: Option<String>,
    /// Comma-separated seeds.
    #[arg(long, env = "HYPERHATE_SEEDS")]
    pub seeds: Option<String>,
    /// Seed of the fixed 80/20 split.
    #[arg(long, env = "HYPERHATE_SPLIT_SEED")]
    pub split_seed: Option<u64>,
    /// Concurrent grid cells; 0 means one per core.
    #[arg(long, env = "HYPERHATE_WORKERS")]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub opts: TrainOpts,
    #[arg(long, env = "HYPERHATE_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub strict: bool,
}

#[derive(Args, Debug)]
pub struct GenToyArgs {
    /// Number of training examples (even).
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    /// Probability of a decoy trigram per example.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, env = "HYPERHATE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Also write a test split of this size.
    #[arg(long)]
    pub test_n: Option<usize>,
    /// Also write this many "generated" examples (half per class).
    #[arg(long)]
    pub generated_n: Option<usize>,
    /// Marker family: `a` (default) or the disjoint `b`.
    #[arg(long, default_value = "a")]
    pub markers: String,
    #[arg(long, env = "HYPERHATE_OUT")]
    pub out: PathBuf,
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Params(a) => cmd_params(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::GenToy(a) => cmd_gen_toy(a),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn parse_kind(s: &str) -> Result<ModelKind> {
    s.trim().parse::<ModelKind>().map_err(|e| usage(e.to_string()))
}

fn policy(strict: bool) -> RecordPolicy {
    if strict {
        RecordPolicy::FailFast
    } else {
        RecordPolicy::Skip
    }
}

fn load(path: &Path, strict: bool) -> Result<Dataset> {
    let format = Format::from_path(path)
        .ok_or_else(|| usage(format!("{}: unknown file type (use .csv, .tsv or .jsonl)", path.display())))?;
    let loaded = load_examples(path, format, policy(strict))?;
    if loaded.skipped > 0 {
        eprintln!("{}: skipped {} unusable record(s)", path.display(), loaded.skipped);
    }
    Ok(loaded.dataset)
}

fn make_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut keys = vec!["model", "train", "out"];
    keys.extend(AUG_KEYS);
    keys.extend(TRAIN_KEYS);
    let file = ConfigFile::load(a.config.config.as_deref(), &keys)?;
    let mut rc = RunConfig::new("train");

    let kind = parse_kind(&file.require(a.model, "model")?)?;
    let train_path: PathBuf = file.require(a.train, "train")?;
    let out: PathBuf = file.require(a.out, "out")?;
    rc.set("model", kind);
    rc.set("train", train_path.display());
    rc.set("out", out.display());
    let aug = a.aug.resolve(&file, &mut rc, 0)?;
    let mut cfg = a.opts.resolve(&file, &mut rc)?;
    cfg.track_fit = true;

    let gold = load(&train_path, a.strict)?;
    let data = merge_augmentation(&gold, &aug)?;
    let trained = train(&ModelConfig::new(kind), &data, &cfg)?;

    make_dir(&out)?;
    rc.write(&out)?;
    checkpoint::save(&trained.model, &out.join("model.json"))?;
    let hist_path = out.join("history.jsonl");
    let mut w = BufWriter::new(fs::File::create(&hist_path).with_context(|| format!("creating {}", hist_path.display()))?);
    trained.history.write_jsonl(&mut w).and_then(|()| w.flush()).with_context(|| format!("writing {}", hist_path.display()))?;

    // One line per fact so scripts can grep the summary.
    let texts: Vec<&str> = data.texts().collect();
    let golds: Vec<f64> = data.examples.iter().map(|e| e.label.as_f64()).collect();
    let fit = hate_metrics(&trained.model.predict(&texts)?, &golds, cfg.threshold)?;
    let best = trained.history.best().expect("training records at least one epoch");
    println!("model\t{kind}");
    println!("examples\t{}", data.len());
    println!("epochs\t{}", trained.history.epochs.len());
    println!("restart\t{}", trained.restart);
    println!("best_epoch\t{}", trained.history.best_epoch);
    println!("best_val_loss\t{:.6}", best.val_loss);
    println!("best_val_f1\t{:.4}", best.val_f1);
    let peak = trained.history.epochs.iter().filter_map(|r| r.train_f1).fold(0.0, f64::max);
    println!("peak_train_f1\t{peak:.4}");
    println!("final_train_f1\t{:.4}", fit.f1);
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let file = ConfigFile::load(a.config.config.as_deref(), &["checkpoint", "test", "threshold", "out"])?;
    let ckpt: PathBuf = file.require(a.checkpoint, "checkpoint")?;
    let test: PathBuf = file.require(a.test, "test")?;
    let threshold = file.pick_or(a.threshold, "threshold", TrainConfig::default().threshold)?;
    let out: Option<PathBuf> = file.pick(a.out, "out")?;

    let model = checkpoint::load(&ckpt)?;
    let data = load(&test, a.strict)?;
    let texts: Vec<&str> = data.texts().collect();
    let golds: Vec<f64> = data.examples.iter().map(|e| e.label.as_f64()).collect();
    let report = hate_metrics(&model.predict(&texts)?, &golds, threshold)?;
    let line = serde_json::to_string(&report)?;
    println!("{line}");
    if let Some(out) = out {
        let mut rc = RunConfig::new("eval");
        rc.set("checkpoint", ckpt.display());
        rc.set("test", test.display());
        rc.set("threshold", threshold);
        rc.set("out", out.display());
        make_dir(&out)?;
        rc.write(&out)?;
        fs::write(out.join("eval.json"), format!("{line}\n")).context("writing eval.json")?;
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let file = ConfigFile::load(a.config.config.as_deref(), &["checkpoint", "threshold"])?;
    let ckpt: PathBuf = file.require(a.checkpoint, "checkpoint")?;
    let threshold = file.pick_or(a.threshold, "threshold", TrainConfig::default().threshold)?;
    let texts: Vec<String> = match (&a.input, a.texts.is_empty()) {
        (Some(_), false) => return Err(usage("give texts either as arguments or with --input, not both")),
        (Some(path), true) => fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?
            .lines()
            .map(str::to_string)
            .collect(),
        (None, false) => a.texts,
        (None, true) => std::io::stdin().lock().lines().collect::<std::io::Result<_>>().context("reading stdin")?,
    };
    let model = checkpoint::load(&ckpt)?;
    let p = model.predict(&texts)?;
    let stdout = std::io::stdout();
    let mut w = BufWriter::new(stdout.lock());
    for prob in p {
        let label = if prob >= threshold { Label::Hate } else { Label::NonHate };
        writeln!(w, "{prob}\t{label}")?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_params(a: ParamsArgs) -> Result<()> {
    let kind = parse_kind(&a.model)?;
    let report = default_param_report(kind, a.vocab_rows);
    println!("{}", kind.display_name());
    println!("{report}");
    if let (Some(published), Some(aux)) = (kind.published_total(), kind.published_aux()) {
        let ours = report.total();
        let residual = published as i64 - ours as i64;
        println!("{:<24}{:>12}", "published total", thousands(published));
        println!(
            "{:<24}{:>12}  ({:.2}%; published aux {} vs ours {}, no f1/f2 biases)",
            "residual",
            residual,
            100.0 * residual as f64 / published as f64,
            thousands(aux),
            thousands(aux_params(kind)),
        );
    }
    if matches!(kind, ModelKind::Static | ModelKind::Dynamic) {
        let b = ModelConfig::new(kind).backbone;
        let [c_in, k, c_out] = b.conv_shape();
        println!(
            "generated kernel        {c_in}×{k}×{c_out} = {} values per conv layer",
            thousands(c_in * k * c_out)
        );
    }
    Ok(())
}

/// Parameters of the auxiliary network alone.
fn aux_params(kind: ModelKind) -> usize {
    let c = ModelConfig::new(kind);
    match kind {
        ModelKind::Static => hypernet::static_report(&c.backbone, &c.aux).total(),
        ModelKind::Dynamic => hypernet::dynamic_report(&c.backbone, &c.aux).total(),
        _ => 0,
    }
}

fn split_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|e| usage(format!("bad {what} entry '{p}': {e}"))))
        .collect()
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "data".into())
}

fn cmd_experiment(a: ExperimentArgs) -> Result<()> {
    let mut keys = vec![
        "model", "data", "train", "test", "name", "target-data", "target-test", "target-name", "grid", "seeds",
        "split-seed", "workers", "out",
    ];
    keys.extend(AUG_KEYS);
    keys.extend(TRAIN_KEYS);
    let file = ConfigFile::load(a.config.config.as_deref(), &keys)?;
    let mut rc = RunConfig::new("experiment");

    let models = file.pick_or(a.model, "model", "all".to_string())?;
    let kinds: Vec<ModelKind> = if models.trim() == "all" {
        ModelKind::ALL.to_vec()
    } else {
        models.split(',').map(parse_kind).collect::<Result<_>>()?
    };
    let grid: Vec<usize> = split_list(&file.pick_or(a.grid, "grid", "0".to_string())?, "grid")?;
    let seeds: Vec<u64> = split_list(&file.pick_or(a.seeds, "seeds", "0".to_string())?, "seed")?;
    let split_seed = file.pick_or(a.split_seed, "split-seed", 0u64)?;
    let workers = file.pick_or(a.workers, "workers", 0usize)?;
    let out: PathBuf = file.require(a.out, "out")?;
    let data: Option<PathBuf> = file.pick(a.data, "data")?;
    let train_p: Option<PathBuf> = file.pick(a.train, "train")?;
    let test_p: Option<PathBuf> = file.pick(a.test, "test")?;
    let target_data: Option<PathBuf> = file.pick(a.target_data, "target-data")?;
    let target_test: Option<PathBuf> = file.pick(a.target_test, "target-test")?;

    rc.set("model", kinds.iter().map(|k| k.key()).collect::<Vec<_>>().join(","));
    let (train_set, test_set, default_name) = match (&data, &train_p, &test_p) {
        (Some(d), None, None) => {
            rc.set("data", d.display());
            let all = load(d, a.strict)?;
            let (tr, te) = stratified_split(&all, TRAIN_SPLIT, split_seed)?;
            (tr, te, stem(d))
        }
        (None, Some(tr), Some(te)) => {
            rc.set("train", tr.display());
            rc.set("test", te.display());
            (load(tr, a.strict)?, load(te, a.strict)?, stem(tr))
        }
        _ => return Err(usage("give either --data or both --train and --test")),
    };
    let name = file.pick_or(a.name, "name", default_name)?;
    rc.set("name", &name);
    rc.set("grid", grid.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(","));
    rc.set("seeds", seeds.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(","));
    rc.set("split-seed", split_seed);
    rc.set("workers", workers);
    rc.set("out", out.display());
    let augmentation = a.aug.resolve(&file, &mut rc, 0)?;
    let train_cfg = a.opts.resolve(&file, &mut rc)?;

    let source = DomainData {
        name,
        train: train_set,
        test: test_set,
        augmentation,
    };
    let spec = ExperimentSpec {
        kinds,
        grid,
        seeds,
        train: train_cfg,
        workers,
    };
    let target = match (&target_data, &target_test) {
        (None, None) => None,
        (Some(d), None) => {
            rc.set("target-data", d.display());
            let all = load(d, a.strict)?;
            let (tr, te) = stratified_split(&all, TRAIN_SPLIT, split_seed)?;
            Some((tr, te, stem(d)))
        }
        (None, Some(t)) => {
            rc.set("target-test", t.display());
            Some((Dataset::new(stem(t), Vec::new()), load(t, a.strict)?, stem(t)))
        }
        (Some(_), Some(_)) => return Err(usage("give at most one of --target-data and --target-test")),
    };

    make_dir(&out)?;
    let rows = match target {
        None => run_intra_experiment(&source, &spec)?,
        Some((tr, te, default_target)) => {
            let target_name = file.pick_or(a.target_name, "target-name", default_target)?;
            rc.set("target-name", &target_name);
            let target = DomainData {
                name: target_name,
                train: tr,
                test: te,
                augmentation: AugmentationSpec::none(),
            };
            run_cross_experiment(&source, &target, &spec)?
        }
    };
    rc.write(&out)?;
    let write = |file: &str, body: String| -> Result<()> {
        let p = out.join(file);
        fs::write(&p, body).with_context(|| format!("writing {}", p.display()))
    };
    write("results.tsv", format_results(&rows))?;
    let tables = tables_report(&rows);
    write("tables.tsv", tables.clone())?;
    write("curves.tsv", emit_curves(&rows))?;
    print!("{tables}");
    Ok(())
}

fn cmd_gen_toy(a: GenToyArgs) -> Result<()> {
    let markers = match a.markers.as_str() {
        "a" => &MARKERS_A,
        "b" => &MARKERS_B,
        other => return Err(usage(format!("unknown marker family '{other}' (expected a or b)"))),
    };
    let train_set = generate_toy_with(a.n, a.noise, a.seed, markers, Provenance::Gold)?;
    make_dir(&a.out)?;
    let mut rc = RunConfig::new("gen-toy");
    rc.set("n", a.n);
    rc.set("noise", a.noise);
    rc.set("seed", a.seed);
    rc.set("markers", &a.markers);
    rc.set("out", a.out.display());
    write_csv(&a.out.join("train.csv"), &train_set.examples)?;
    println!("{}", a.out.join("train.csv").display());
    if let Some(n) = a.test_n {
        rc.set("test-n", n);
        // Fixed seed offsets keep the files independent of each other.
        let test = generate_toy_with(n, a.noise, a.seed.wrapping_add(1_000_003), markers, Provenance::Gold)?;
        write_csv(&a.out.join("test.csv"), &test.examples)?;
        println!("{}", a.out.join("test.csv").display());
    }
    if let Some(n) = a.generated_n {
        rc.set("generated-n", n);
        let gen = generate_toy_with(n, a.noise, a.seed.wrapping_add(2_000_003), markers, Provenance::Generated)?;
        let (hate, non): (Vec<_>, Vec<_>) = gen.examples.into_iter().partition(|e| e.label.is_hate());
        write_generated(&a.out.join("generated_hate.txt"), &hate)?;
        write_generated(&a.out.join("generated_nonhate.txt"), &non)?;
        println!("{}", a.out.join("generated_hate.txt").display());
        println!("{}", a.out.join("generated_nonhate.txt").display());
    }
    rc.write(&a.out)?;
    Ok(())
}
