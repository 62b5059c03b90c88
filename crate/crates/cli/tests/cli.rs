//! End-to-end runs of the `hyperhate` binary.

use std::path::Path;
use std::process::{Command, Output};

fn hyperhate(args: &[&str]) -> Output {
    hyperhate_env(args, &[])
}

fn hyperhate_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hyperhate"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen_toy(dir: &Path, n: &str) {
    let o = hyperhate(&["gen-toy", "--n", n, "--noise", "0", "--seed", "3", "--test-n", "32", "--generated-n", "16", "--out", p(dir)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn params_prints_the_table4_breakdown() {
    let o = hyperhate(&["params", "--model", "static"]);
    assert_eq!(code(&o), 0);
    let s = stdout(&o);
    for needle in ["3,500", "57,472", "4,128", "33", "10,900", "76,033", "76,087", "28,672"] {
        assert!(s.contains(needle), "missing {needle} in\n{s}");
    }
    let d = stdout(&hyperhate(&["params", "--model", "dynamic"]));
    assert!(d.contains("129,197") && d.contains("129,453") && d.contains("64,064"), "{d}");
}

#[test]
fn bad_invocations_exit_one() {
    assert_eq!(code(&hyperhate(&["nonsense"])), 1);
    assert_eq!(code(&hyperhate(&["train", "--model", "static"])), 1, "missing --train is a usage error");
    assert_eq!(code(&hyperhate(&["params", "--model", "bert"])), 1);
    let dir = tempfile::tempdir().unwrap();
    gen_toy(dir.path(), "16");
    let train = dir.path().join("train.csv");
    let out = dir.path().join("o");
    let o = hyperhate(&["train", "--model", "plain", "--train", p(&train), "--out", p(&out), "--patience", "0"]);
    assert_eq!(code(&o), 1, "patience 0 violates the config contract");
    assert!(!out.exists(), "nothing is written for a rejected configuration");
}

#[test]
fn data_problems_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let out = dir.path().join("o");
    assert_eq!(code(&hyperhate(&["train", "--model", "plain", "--train", p(&missing), "--out", p(&out)])), 2);
    let one_class = dir.path().join("one.csv");
    std::fs::write(&one_class, "text,label\na b,1\nc d,1\ne f,1\n").unwrap();
    assert_eq!(code(&hyperhate(&["train", "--model", "plain", "--train", p(&one_class), "--out", p(&out)])), 2);
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "words,class\nx,1\n").unwrap();
    assert_eq!(code(&hyperhate(&["train", "--model", "plain", "--train", p(&bad), "--out", p(&out)])), 2);
}

#[test]
fn diverging_training_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    gen_toy(dir.path(), "16");
    let train = dir.path().join("train.csv");
    let out = dir.path().join("o");
    let o = hyperhate(&["train", "--model", "plain", "--train", p(&train), "--out", p(&out), "--lr", "1e300", "--epochs", "3"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    gen_toy(dir.path(), "32");
    let out = dir.path().join("run");
    let train = dir.path().join("train.csv");
    let o = hyperhate(&["train", "--model", "static", "--train", p(&train), "--epochs", "2", "--seed", "1", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["model.json", "history.jsonl", "run_config.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let history = std::fs::read_to_string(out.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 2);
    assert!(history.lines().all(|l| l.contains("\"train_loss\"") && l.contains("\"val_f1\"")));

    let ckpt = out.join("model.json");
    let test = dir.path().join("test.csv");
    let e = hyperhate(&["eval", "--checkpoint", p(&ckpt), "--test", p(&test)]);
    assert_eq!(code(&e), 0);
    let report: serde_json::Value = serde_json::from_str(stdout(&e).trim()).unwrap();
    let n: u64 = ["tp", "fp", "fn", "tn"].iter().map(|k| report[k].as_u64().unwrap()).sum();
    assert_eq!(n, 32);

    let pr = hyperhate(&["predict", "--checkpoint", p(&ckpt), "you qxz there", "you qxz there", ""]);
    assert_eq!(code(&pr), 0);
    let lines: Vec<String> = stdout(&pr).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], lines[1], "same text, same probability bitwise");
    for l in &lines {
        let (prob, label) = l.split_once('\t').unwrap();
        let prob: f64 = prob.parse().unwrap();
        assert!(prob > 0.0 && prob < 1.0);
        assert_eq!(label, if prob >= 0.5 { "hate" } else { "non-hate" });
    }
}

#[test]
fn identical_run_configs_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    gen_toy(dir.path(), "32");
    let train = dir.path().join("train.csv");
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = hyperhate(&["train", "--model", "dynamic", "--train", p(&train), "--epochs", "2", "--seed", "9", "--out", p(&out)]);
        assert_eq!(code(&o), 0);
        (std::fs::read(out.join("model.json")).unwrap(), std::fs::read(out.join("history.jsonl")).unwrap())
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn flags_beat_env_beat_config_file() {
    let dir = tempfile::tempdir().unwrap();
    gen_toy(dir.path(), "16");
    let cfg = dir.path().join("run.conf");
    std::fs::write(
        &cfg,
        format!("model=plain\ntrain={}\nepochs=1\nseed=11\nlr=0.002\n", p(&dir.path().join("train.csv"))),
    )
    .unwrap();
    let out = dir.path().join("o");
    let o = hyperhate_env(
        &["train", "--config", p(&cfg), "--out", p(&out), "--seed", "5"],
        &[("HYPERHATE_SEED", "6"), ("HYPERHATE_LR", "0.003")],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rc = std::fs::read_to_string(out.join("run_config.txt")).unwrap();
    assert!(rc.contains("seed=5\n"), "flag wins: {rc}");
    assert!(rc.contains("lr=0.003\n"), "env beats file: {rc}");
    assert!(rc.contains("epochs=1\n"), "file beats default: {rc}");
    assert!(rc.contains("patience=3\n"), "default: {rc}");

    // The recorded configuration replays the run exactly.
    let again = dir.path().join("again");
    let replay = dir.path().join("replay.conf");
    std::fs::write(&replay, rc.replace(p(&out), p(&again))).unwrap();
    assert_eq!(code(&hyperhate(&["train", "--config", p(&replay)])), 0);
    assert_eq!(std::fs::read(out.join("model.json")).unwrap(), std::fs::read(again.join("model.json")).unwrap());

    std::fs::write(&cfg, "colour=blue\n").unwrap();
    assert_eq!(code(&hyperhate(&["train", "--config", p(&cfg)])), 1);
}

#[test]
fn experiment_writes_versioned_results_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    gen_toy(dir.path(), "32");
    let out = dir.path().join("exp");
    let o = hyperhate(&[
        "experiment",
        "--model", "plain,cnngru",
        "--train", p(&dir.path().join("train.csv")),
        "--test", p(&dir.path().join("test.csv")),
        "--name", "toy",
        "--aug-hate", p(&dir.path().join("generated_hate.txt")),
        "--aug-nonhate", p(&dir.path().join("generated_nonhate.txt")),
        "--grid", "0,16",
        "--epochs", "1",
        "--out", p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let results = std::fs::read_to_string(out.join("results.tsv")).unwrap();
    let rows = hyperhate::eval::parse_results(results.as_bytes()).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.source == "toy" && r.target == "toy" && r.report.total() == 32));
    let tables = std::fs::read_to_string(out.join("tables.tsv")).unwrap();
    assert!(tables.starts_with("architecture\tmetric\ttoy baseline\ttoy augmented\ttoy (%)"), "{tables}");
    assert!(out.join("curves.tsv").exists() && out.join("run_config.txt").exists());
}
