//! End-to-end tests of the `d2t` binary: pipeline wiring, exit codes, and
//! manifest behavior. Metric-level guarantees live in `acceptance.rs`.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use d2t_core::corpus::write_corpus;
use d2t_core::synth::divergent_corpus;

fn d2t(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_d2t"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawning d2t")
}

fn assert_success(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed with {:?}:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_synth_corpus(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let path = dir.join("corpus.jsonl");
    write_corpus(&divergent_corpus(n, seed), &path).expect("writing synthetic corpus");
    path
}

const SMOKE_CONFIG: &str = "\
model.vocab_size = 120
model.embed_dim = 12
model.hidden_dim = 12
model.dropout = 0.1
model.pos_buckets = 8
model.seed = 7
schedule.steps = 30
schedule.batch_size = 4
schedule.decay_start = 10
schedule.decay_every = 10
schedule.shuffle_seed = 7
";

#[test]
fn full_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    write_synth_corpus(dir, 8, 42);
    std::fs::write(dir.join("run.cfg"), SMOKE_CONFIG).unwrap();

    assert_success(
        &d2t(&["build-index", "corpus.jsonl", "--out", "index.tsv"], dir),
        "build-index",
    );
    assert_success(
        &d2t(&["label", "corpus.jsonl", "--index", "index.tsv", "--out", "labels.txt"], dir),
        "label",
    );
    let labels = std::fs::read_to_string(dir.join("labels.txt")).unwrap();
    assert_eq!(labels.lines().count(), 8);

    assert_success(
        &d2t(&["filter", "corpus.jsonl", "--index", "index.tsv", "--out", "filtered.jsonl"], dir),
        "filter",
    );
    assert_success(
        &d2t(
            &[
                "train",
                "filtered.jsonl",
                "--index",
                "index.tsv",
                "--config",
                "run.cfg",
                "--out",
                "model.ckpt",
            ],
            dir,
        ),
        "train",
    );
    assert_success(
        &d2t(
            &[
                "generate",
                "corpus.jsonl",
                "--model",
                "model.ckpt",
                "--weights",
                "0.5,0.0,0.5",
                "--beam",
                "2",
                "--max-len",
                "12",
                "--out",
                "preds.txt",
            ],
            dir,
        ),
        "generate",
    );
    let preds = std::fs::read_to_string(dir.join("preds.txt")).unwrap();
    assert_eq!(preds.lines().count(), 8);
    for line in preds.lines() {
        assert!(line.contains('\t'), "prediction line lacks a tab: {line:?}");
    }

    assert_success(
        &d2t(
            &[
                "evaluate",
                "preds.txt",
                "--corpus",
                "corpus.jsonl",
                "--index",
                "index.tsv",
                "--out",
                "report.tsv",
            ],
            dir,
        ),
        "evaluate",
    );
    let report = std::fs::read_to_string(dir.join("report.tsv")).unwrap();
    assert_eq!(report.lines().count(), 7, "one line per metric:\n{report}");
    for metric in
        ["bleu", "parent_precision", "parent_recall", "parent_f", "hallucination_rate", "mean_length", "flesch"]
    {
        assert!(report.lines().any(|l| l.starts_with(metric)), "missing {metric}:\n{report}");
    }

    assert_success(
        &d2t(
            &[
                "sweep",
                "corpus.jsonl",
                "--model",
                "model.ckpt",
                "--index",
                "index.tsv",
                "--beam",
                "1",
                "--max-len",
                "10",
                "--out",
                "sweep.tsv",
            ],
            dir,
        ),
        "sweep",
    );
    let sweep = std::fs::read_to_string(dir.join("sweep.tsv")).unwrap();
    assert_eq!(sweep.lines().count(), 11, "header plus one row per weight setting:\n{sweep}");

    // Every command left a manifest next to its output.
    for name in
        ["index.tsv", "labels.txt", "filtered.jsonl", "model.ckpt", "preds.txt", "report.tsv", "sweep.tsv"]
    {
        let manifest = dir.join(format!("{name}.manifest.json"));
        assert!(manifest.exists(), "missing manifest for {name}");
    }
}

#[test]
fn missing_input_exits_two_with_a_parsable_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = d2t(
        &["label", "absent.jsonl", "--index", "also-absent.tsv", "--out", "labels.txt"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(
        stderr.lines().any(|l| l == "error: no such input: absent.jsonl"),
        "unexpected stderr: {stderr}"
    );
}

#[test]
fn reruns_are_byte_identical_and_manifests_differ_only_in_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    write_synth_corpus(dir, 6, 11);

    assert_success(&d2t(&["build-index", "corpus.jsonl", "--out", "a.tsv"], dir), "first run");
    assert_success(&d2t(&["build-index", "corpus.jsonl", "--out", "b.tsv"], dir), "second run");
    assert_eq!(
        std::fs::read(dir.join("a.tsv")).unwrap(),
        std::fs::read(dir.join("b.tsv")).unwrap(),
        "index files differ between reruns"
    );

    let mut a: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("a.tsv.manifest.json")).unwrap())
            .unwrap();
    let mut b: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("b.tsv.manifest.json")).unwrap())
            .unwrap();
    // The output path differs by construction here; normalize it along with
    // the timestamp, then require everything else to match.
    for m in [&mut a, &mut b] {
        let obj = m.as_object_mut().unwrap();
        obj.insert("created_unix".into(), 0.into());
        obj.insert("outputs".into(), serde_json::json!({}));
        let cmd = obj.get_mut("command").unwrap().as_array_mut().unwrap();
        let last = cmd.len() - 1;
        cmd[last] = "OUT".into();
    }
    assert_eq!(a, b);
}

#[test]
fn seed_flag_overrides_model_and_shuffle_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    write_synth_corpus(dir, 4, 5);
    assert_success(
        &d2t(&["build-index", "corpus.jsonl", "--seed", "9", "--out", "index.tsv"], dir),
        "build-index",
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("index.tsv.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["seed"], 9);
    let config = manifest["config"].as_str().unwrap();
    assert!(config.contains("model.seed = 9"), "{config}");
    assert!(config.contains("schedule.shuffle_seed = 9"), "{config}");
}

#[test]
fn weights_that_do_not_sum_to_one_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = d2t(
        &[
            "generate",
            "corpus.jsonl",
            "--model",
            "model.ckpt",
            "--weights",
            "0.5,0.5,0.5",
            "--out",
            "preds.txt",
        ],
        dir.path(),
    );
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("weights"), "unexpected stderr: {stderr}");
}

#[test]
fn missing_out_flag_is_reported_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let dir_path = dir.path();
    write_synth_corpus(dir_path, 2, 1);
    let out = d2t(&["build-index", "corpus.jsonl"], dir_path);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("--out is required"), "unexpected stderr: {stderr}");
}
