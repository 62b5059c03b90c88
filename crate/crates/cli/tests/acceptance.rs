//! Acceptance criteria, one PASS/FAIL/SKIP line each.
//!
//! Runs as a plain binary (`harness = false`) so that every criterion is
//! reported even when an earlier one fails. Pass a substring to run only
//! the criteria whose name contains it, e.g.
//! `cargo test --test acceptance -- gradient`.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use autodiff::gradcheck::{self, MAX_REL_ERR, TRIALS};
use autodiff::{Mode, Tape, Var};
use hyperhate::backbone::BackboneConfig;
use hyperhate::data::{self, AugmentationSpec};
use hyperhate::eval::{self, DomainData, ExperimentRow, ExperimentSpec};
use hyperhate::hypernet::AuxConfig;
use hyperhate::model::default_param_report;
use hyperhate::toy::{generate_toy_dataset, generate_toy_with, MARKERS_A};
use hyperhate::training::EpochRecord;
use hyperhate::{hate_metrics, EvalReport, Model, ModelConfig, ModelKind, Provenance, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Status {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    status: Status,
    lines: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self {
            status: Status::Pass,
            lines: Vec::new(),
        }
    }

    fn note(&mut self, line: impl Into<String>) {
        self.lines.push(line.into());
    }

    /// Records a sub-check; any failing one fails the criterion.
    fn expect(&mut self, ok: bool, line: impl Into<String>) {
        let line = line.into();
        self.lines.push(format!("{} {line}", if ok { "ok  " } else { "FAIL" }));
        if !ok {
            self.status = Status::Fail;
        }
    }

    fn skip(&mut self, line: impl Into<String>) {
        self.status = Status::Skip;
        self.note(line);
    }
}

type Criterion = fn(&mut Outcome);

const CRITERIA: &[(&str, Criterion)] = &[
    ("parameter accounting", parameter_accounting),
    ("gradient suite", gradient_suite),
    ("static/dynamic property", static_dynamic_property),
    ("metrics oracle", metrics_oracle),
    ("determinism", determinism),
    ("overfit smoke", overfit_smoke),
    ("early training loss", early_training_loss),
    ("toy generalization", toy_generalization),
    ("results tables and DV grid", tables_and_dv_grid),
];

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, criterion) in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let mut outcome = Outcome::new();
        if let Err(panic) = catch_unwind(AssertUnwindSafe(|| criterion(&mut outcome))) {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            outcome.expect(false, format!("panicked: {msg}"));
        }
        let label = match outcome.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::Skip => "SKIP",
        };
        println!("{label} [{name}] ({:.1}s)", start.elapsed().as_secs_f64());
        for line in &outcome.lines {
            println!("    {line}");
        }
    }
    println!("acceptance: {failed} criteria failed");
    if failed > 0 {
        std::process::exit(1);
    }
}

fn print_within(out: &mut Outcome, what: &str, elapsed: Duration, budget: Duration) {
    out.expect(
        elapsed <= budget,
        format!("{what} took {:.1}s (budget {:.0}s)", elapsed.as_secs_f64(), budget.as_secs_f64()),
    );
}

// ---------------------------------------------------------------------------

fn parameter_accounting(out: &mut Outcome) {
    // The word-level baseline is sized for a 20,000-word vocabulary here.
    let expected_shared = [("embedding", 3_500), ("fc1", 57_472), ("fc2", 4_128), ("fc3", 33)];
    for kind in [ModelKind::Plain, ModelKind::Static, ModelKind::Dynamic] {
        let report = default_param_report(kind, 20_001);
        for (layer, want) in expected_shared {
            let got = report.get(layer).unwrap_or(0);
            out.expect(got == want, format!("{kind} {layer}: {got} (expected {want})"));
        }
    }
    let cfg = BackboneConfig::default();
    out.expect(
        cfg.conv_len() == 28_672,
        format!("generated kernel per layer: {:?} = {} elements (expected 28,672)", cfg.conv_shape(), cfg.conv_len()),
    );
    for (kind, want) in [(ModelKind::Static, 76_033), (ModelKind::Dynamic, 129_197)] {
        let ours = default_param_report(kind, 20_001).total();
        out.expect(ours == want, format!("{kind} total: {ours} (expected {want})"));
        let published = kind.published_total().expect("published total");
        let residual = published as i64 - ours as i64;
        let shared: usize = expected_shared.iter().map(|(_, n)| n).sum();
        out.note(format!(
            "{kind} residual vs published {published}: {residual:+} ({:.2}%), all in the auxiliary network \
             (ours {}, published {})",
            residual as f64 / published as f64 * 100.0,
            ours - shared,
            kind.published_aux().expect("published aux"),
        ));
    }
}

// ---------------------------------------------------------------------------

/// Down-scaled char-level configuration for end-to-end gradient checks.
fn small_config(kind: ModelKind) -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig {
            vocab_rows: BackboneConfig::default().vocab_rows,
            embed_dim: 5,
            seq_len: 12,
            kernel: 3,
            channels: 8,
            pool: 2,
            fc1: 6,
            fc2: 4,
            dropout: 0.3,
        },
        aux: AuxConfig {
            z_dim: 3,
            gru_hidden: 3,
            recurrent_dropout: 0.2,
        },
        ..ModelConfig::new(kind)
    }
}

fn random_text(rng: &mut ChaCha8Rng, len: std::ops::Range<usize>) -> String {
    const CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789 !?.,'-";
    let n = rng.gen_range(len);
    (0..n).map(|_| CHARS[rng.gen_range(0..CHARS.len())] as char).collect()
}

/// Worst relative error of the full training graph (dropout active, batch of
/// two distinct texts) with respect to every parameter, over `trials` draws.
fn graph_gradient_error(kind: ModelKind, trials: usize) -> f64 {
    let config = small_config(kind);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let template = Model::new(config, None, &mut rng).expect("small model");
        let texts = [random_text(&mut rng, 3..13), random_text(&mut rng, 3..13)];
        let seqs: Vec<_> = texts.iter().map(|t| template.encode(t)).collect();
        let shapes: Vec<Vec<usize>> = template.params.tensors().iter().map(|t| t.shape().to_vec()).collect();
        let inputs: Vec<_> = shapes.iter().map(|s| gradcheck::random_tensor(&mut rng, s)).collect();
        let build = move |tape: &mut Tape, vars: &[Var]| -> Var {
            let bound = template.params.bind_vars(vars);
            let refs: Vec<_> = seqs.iter().collect();
            let mut dropout_rng = ChaCha8Rng::seed_from_u64(trial as u64);
            template.forward(tape, &bound, &refs, Mode::Train, &mut dropout_rng).expect("forward")
        };
        worst = worst.max(gradcheck::check(&build, &inputs, &mut rng));
    }
    worst
}

fn gradient_suite(out: &mut Outcome) {
    let start = Instant::now();
    for case in gradcheck::op_suite() {
        let worst = case.run(TRIALS);
        out.expect(worst <= MAX_REL_ERR, format!("op {}: worst relative error {worst:.2e} over {TRIALS} trials", case.name));
    }
    for kind in [ModelKind::Static, ModelKind::Dynamic] {
        let worst = graph_gradient_error(kind, TRIALS);
        out.expect(
            worst <= MAX_REL_ERR,
            format!("{kind} graph (L=12, C=8, k=3): worst relative error {worst:.2e} over {TRIALS} trials"),
        );
    }
    print_within(out, "gradient suite", start.elapsed(), Duration::from_secs(60));
}

// ---------------------------------------------------------------------------

fn static_dynamic_property(out: &mut Outcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut texts = BTreeSet::new();
    while texts.len() < 100 {
        texts.insert(random_text(&mut rng, 1..120));
    }
    let texts: Vec<String> = texts.into_iter().collect();

    let stat = Model::new(ModelConfig::new(ModelKind::Static), None, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let reference = stat.conv_kernels(&texts[0]).unwrap().expect("char-level kernels");
    let same = texts[1..].iter().all(|t| stat.conv_kernels(t).unwrap().expect("kernels") == reference);
    out.expect(same, "static: both generated kernels bit-identical across 100 distinct inputs");

    let mut all_distinct = true;
    let mut equal_pairs = 0;
    for trial in 0..100u64 {
        let model = Model::new(ModelConfig::new(ModelKind::Dynamic), None, &mut ChaCha8Rng::seed_from_u64(trial)).unwrap();
        let mut trng = ChaCha8Rng::seed_from_u64(10_000 + trial);
        let a = random_text(&mut trng, 1..120);
        let mut b = random_text(&mut trng, 1..120);
        while b == a {
            b = random_text(&mut trng, 1..120);
        }
        let ka = model.conv_kernels(&a).unwrap().expect("kernels");
        let kb = model.conv_kernels(&b).unwrap().expect("kernels");
        if ka[0] == kb[0] || ka[1] == kb[1] {
            all_distinct = false;
            equal_pairs += 1;
        }
    }
    out.expect(
        all_distinct,
        format!("dynamic: kernels differ for every pair of differing inputs over 100 seeded trials ({equal_pairs} equal)"),
    );
}

// ---------------------------------------------------------------------------

fn metrics_oracle(out: &mut Outcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut mismatches = 0;
    let mut zero_pr = 0;
    for trial in 0..1000 {
        let n = rng.gen_range(1..60);
        let golds: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let preds: Vec<f64> = if trial % 10 == 0 {
            // Every prediction wrong: no true positives, so P + R = 0.
            golds.iter().map(|g| if *g == 1.0 { 0.2 } else { 0.8 }).collect()
        } else {
            (0..n).map(|_| rng.gen::<f64>()).collect()
        };
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for (p, g) in preds.iter().zip(&golds) {
            match (*p >= 0.5, *g == 1.0) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                (false, false) => {}
            }
        }
        let oracle = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
        if tp == 0.0 {
            zero_pr += 1;
        }
        let got = hate_metrics(&preds, &golds, 0.5).unwrap();
        if (got.f1 - oracle).abs() > 1e-12 || !got.f1.is_finite() {
            mismatches += 1;
        }
    }
    out.expect(
        mismatches == 0,
        format!("1000 random vectors ({zero_pr} with P+R=0): {mismatches} F1 mismatches against 2TP/(2TP+FP+FN)"),
    );
    let m = EvalReport::from_counts(2, 1, 2, 0);
    out.expect(format!("{:.4}", m.f1) == "0.5714", format!("TP=2, FP=1, FN=2 gives F1 {:.4} (expected 0.5714)", m.f1));
}

// ---------------------------------------------------------------------------

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Runs the `hyperhate` binary quietly and returns its exit code.
fn cli(args: &[&str]) -> i32 {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_hyperhate")).args(args).output().expect("binary runs");
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out.status.code().unwrap_or(-1)
}

fn determinism(out: &mut Outcome) {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.csv");
    data::write_csv(&train, &generate_toy_dataset(64, 0.05, 5).unwrap().examples).unwrap();
    for kind in ModelKind::ALL {
        let run = |name: &str| -> Option<(Vec<u8>, Vec<u8>)> {
            let dest = dir.path().join(format!("{kind}-{name}"));
            let code = cli(&[
                "train", "--model", kind.key(), "--train", path_str(&train), "--epochs", "3", "--seed", "21",
                "--out", path_str(&dest),
            ]);
            (code == 0).then(|| (std::fs::read(dest.join("model.json")).unwrap(), std::fs::read(dest.join("history.jsonl")).unwrap()))
        };
        let (a, b) = (run("a"), run("b"));
        out.expect(a.is_some() && a == b, format!("{kind}: two train runs give bit-identical model.json and history.jsonl"));
    }
}

// ---------------------------------------------------------------------------

fn first_perfect_epoch(history: &[EpochRecord]) -> Option<usize> {
    history.iter().find(|e| e.train_f1 == Some(1.0)).map(|e| e.epoch)
}

const OVERFIT_DATA: (usize, f64, u64) = (64, 0.0, 3);

fn overfit_smoke(out: &mut Outcome) {
    let start = Instant::now();
    let (n, noise, seed) = OVERFIT_DATA;
    let data = generate_toy_dataset(n, noise, seed).unwrap();
    let cfg = TrainConfig {
        max_epochs: 200,
        patience: 200,
        track_fit: true,
        ..TrainConfig::default()
    };
    for kind in ModelKind::ALL {
        let t = Instant::now();
        let trained = hyperhate::train(&ModelConfig::new(kind), &data, &cfg).unwrap();
        let h = &trained.history.epochs;
        let first = first_perfect_epoch(h);
        out.expect(
            first.is_some(),
            format!(
                "{kind}: train F1 = 1.0 first at epoch {} of {} ({:.1}s)",
                first.map_or("never".into(), |e| e.to_string()),
                h.len(),
                t.elapsed().as_secs_f64()
            ),
        );
    }
    print_within(out, "overfit smoke", start.elapsed(), Duration::from_secs(300));
}

/// The training-set loss of the overfit smoke runs (lr 1e-3) must strictly
/// decrease over the first five epochs. Training is deterministic, so five
/// epochs reproduce the start of the 200-epoch runs exactly.
fn early_training_loss(out: &mut Outcome) {
    let (n, noise, seed) = OVERFIT_DATA;
    let data = generate_toy_dataset(n, noise, seed).unwrap();
    let cfg = TrainConfig {
        max_epochs: 5,
        patience: 200,
        track_fit: true,
        ..TrainConfig::default()
    };
    for kind in ModelKind::ALL {
        let trained = hyperhate::train(&ModelConfig::new(kind), &data, &cfg).unwrap();
        let fit: Vec<f64> = trained.history.epochs.iter().map(|e| e.fit_loss.expect("tracked")).collect();
        let decreasing = fit.len() == 5 && fit.windows(2).all(|w| w[1] < w[0]);
        out.expect(
            decreasing,
            format!("{kind}: training-set loss strictly decreases over epochs 1-5: {fit:.4?}"),
        );
    }
}

// ---------------------------------------------------------------------------

/// Hyperparameters of the toy generalisation runs: the training defaults
/// with three restarts selected on validation loss. Some initialisations
/// of the non-negative generated kernels stall on the 0.69 loss plateau,
/// and the restarts recover those without looking at the test set.
const TOY_TRAIN: TrainConfig = TrainConfig {
    batch_size: 32,
    max_epochs: 50,
    lr: 1e-3,
    patience: 3,
    validation_fraction: 0.1,
    seed: 0,
    threshold: 0.5,
    track_fit: false,
    restarts: 3,
};

fn write_toy_generated(dir: &Path, n: usize, seed: u64) -> AugmentationSpec {
    let generated = generate_toy_with(n, 0.05, seed, &MARKERS_A, Provenance::Generated).unwrap();
    let (hate, nonhate): (Vec<_>, Vec<_>) = generated.examples.into_iter().partition(|e| e.label.is_hate());
    let paths = [dir.join("generated_hate.txt"), dir.join("generated_nonhate.txt")];
    data::write_generated(&paths[0], &hate).unwrap();
    data::write_generated(&paths[1], &nonhate).unwrap();
    let [hate_path, nonhate_path] = paths.map(Some::<PathBuf>);
    AugmentationSpec { hate_path, nonhate_path, n: 0 }
}

fn toy_generalization(out: &mut Outcome) {
    let dir = tempfile::tempdir().unwrap();
    let domain = DomainData {
        name: "toy".into(),
        train: generate_toy_dataset(2048, 0.05, 11).unwrap(),
        test: generate_toy_dataset(512, 0.05, 12).unwrap(),
        augmentation: write_toy_generated(dir.path(), 2048, 13),
    };
    let spec = ExperimentSpec {
        kinds: ModelKind::ALL.to_vec(),
        grid: vec![0, 2048],
        seeds: vec![0],
        train: TOY_TRAIN,
        workers: 0,
    };
    let rows = eval::run_intra_experiment(&domain, &spec).unwrap();
    let f1 = |kind: ModelKind, n: usize| -> f64 {
        rows.iter().find(|r: &&ExperimentRow| r.model == kind && r.n == n).expect("grid cell").report.f1
    };
    for kind in ModelKind::ALL {
        let (base, aug) = (f1(kind, 0), f1(kind, 2048));
        out.expect(base >= 0.95, format!("{kind}: test F1 {base:.4} on 2048/512 at noise 0.05 (need >= 0.95)"));
        out.expect(
            base - aug <= 0.02,
            format!("{kind}: with 2048 generated examples F1 {aug:.4} ({:+.4}, may drop at most 0.02)", aug - base),
        );
    }
}

// ---------------------------------------------------------------------------

const TABLE_METRICS: [&str; 3] = ["Prec.", "Recall", "F1"];

/// Checks the layout of a comparison table for the given dataset columns.
fn check_table(out: &mut Outcome, what: &str, table: &str, columns: &[&str], kinds: &[ModelKind]) {
    let mut header = String::from("architecture\tmetric");
    for c in columns {
        header.push_str(&format!("\t{c} baseline\t{c} augmented\t{c} (%)"));
    }
    let lines: Vec<&str> = table.lines().collect();
    out.expect(lines.first() == Some(&header.as_str()), format!("{what}: header `{}`", header.replace('\t', " | ")));
    let mut ok = lines.len() == 1 + 3 * kinds.len();
    for (i, kind) in kinds.iter().enumerate() {
        for (m, metric) in TABLE_METRICS.iter().enumerate() {
            let cells: Vec<&str> = lines.get(1 + 3 * i + m).map_or(vec![], |l| l.split('\t').collect());
            let name = if m == 0 { kind.display_name() } else { "" };
            ok &= cells.len() == 2 + 3 * columns.len() && cells[0] == name && cells[1] == *metric;
        }
    }
    out.expect(ok, format!("{what}: one Prec./Recall/F1 block per architecture, 3 cells per dataset"));
}

fn tables_and_dv_grid(out: &mut Outcome) {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let write = |name: &str, n: usize, seed: u64| {
        let path = d.join(name);
        data::write_csv(&path, &generate_toy_dataset(n, 0.05, seed).unwrap().examples).unwrap();
        path
    };
    let (train, test, other) = (write("train.csv", 64, 1), write("test.csv", 32, 2), write("other.csv", 32, 3));
    let aug = write_toy_generated(d, 32, 4);
    let (hate, nonhate) = (aug.hate_path.unwrap(), aug.nonhate_path.unwrap());
    let common = |out_dir: &Path| -> Vec<String> {
        [
            "experiment", "--model", "all", "--train", path_str(&train), "--test", path_str(&test), "--name", "toy",
            "--aug-hate", path_str(&hate), "--aug-nonhate", path_str(&nonhate), "--grid", "0,32", "--epochs", "1",
            "--out", path_str(out_dir),
        ]
        .map(String::from)
        .to_vec()
    };
    let intra_dir = d.join("intra");
    let args = common(&intra_dir);
    let code = cli(&args.iter().map(String::as_str).collect::<Vec<_>>());
    out.expect(code == 0, format!("intra-domain experiment exits {code}"));
    if code == 0 {
        let table = std::fs::read_to_string(intra_dir.join("tables.tsv")).unwrap();
        check_table(out, "intra-domain table", &table, &["toy"], &table_order());
        let rows = eval::parse_results(std::fs::read(intra_dir.join("results.tsv")).unwrap().as_slice()).unwrap();
        out.expect(rows.len() == 8, format!("results file parses back to {} rows (expected 8)", rows.len()));
    }

    let cross_dir = d.join("cross");
    let mut args = common(&cross_dir);
    args.extend(["--target-test", path_str(&other), "--target-name", "other"].map(String::from));
    let code = cli(&args.iter().map(String::as_str).collect::<Vec<_>>());
    out.expect(code == 0, format!("cross-domain experiment exits {code}"));
    if code == 0 {
        let table = std::fs::read_to_string(cross_dir.join("tables.tsv")).unwrap();
        check_table(out, "cross-domain table", &table, &["toy-other"], &table_order());
    }

    dv_grid(out);
}

fn table_order() -> Vec<ModelKind> {
    vec![ModelKind::CnnGru, ModelKind::Plain, ModelKind::Static, ModelKind::Dynamic]
}

/// The full-size grid on the user-supplied DV corpus, when available.
fn dv_grid(out: &mut Outcome) {
    let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
    let (Some(data), Some(hate), Some(nonhate)) =
        (var("HYPERHATE_DV_DATA"), var("HYPERHATE_DV_AUG_HATE"), var("HYPERHATE_DV_AUG_NONHATE"))
    else {
        out.skip(
            "DV grid {0, 5K, 10K}: set HYPERHATE_DV_DATA, HYPERHATE_DV_AUG_HATE and HYPERHATE_DV_AUG_NONHATE \
             (labelled corpus and generated-example files) to run it; the corpus is not redistributable",
        );
        return;
    };
    let models = var("HYPERHATE_DV_MODELS").unwrap_or_else(|| "all".into());
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let code = cli(&[
        "experiment", "--model", &models, "--data", &data, "--name", "DV", "--aug-hate", &hate, "--aug-nonhate",
        &nonhate, "--grid", "0,5000,10000", "--out", path_str(dir.path()),
    ]);
    out.expect(code == 0, format!("DV grid ({models}) exits {code}"));
    if code == 0 {
        let table = std::fs::read_to_string(dir.path().join("tables.tsv")).unwrap();
        for line in table.lines() {
            out.note(line.replace('\t', " | "));
        }
    }
    print_within(out, "DV grid", start.elapsed(), Duration::from_secs(3600));
}
