//! End-to-end exercises of the `latte` binary against temp run directories.

use std::path::Path;
use std::process::{Command, Output};

fn latte(run_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latte"))
        .env("LATTE_RUN_DIR", run_dir)
        .args(args)
        .output()
        .expect("spawn latte")
}

fn ok(run_dir: &Path, args: &[&str]) -> String {
    let out = latte(run_dir, args);
    assert!(
        out.status.success(),
        "latte {args:?} failed:\n{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn fail(run_dir: &Path, args: &[&str]) -> String {
    let out = latte(run_dir, args);
    assert!(!out.status.success(), "latte {args:?} unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const TRAIN: &[&str] = &[
    "train",
    "--max-iterations",
    "20",
    "--max-epochs",
    "10",
    "--learning-rate",
    "2e-3",
    "--batch-size",
    "50",
    "--seed",
    "7",
];

fn run_pipeline(dir: &Path) -> String {
    ok(dir, &["make-toy", "--classes", "5", "--seed", "7"]);
    ok(dir, &["describe", "--provider", "stub", "--seed", "7"]);
    ok(dir, &["pseudo-label"]);
    ok(dir, TRAIN);
    ok(dir, &["eval"]);
    ok(dir, &["hash"]).trim().to_string()
}

#[test]
fn smoke_chain_exits_zero_and_leaves_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(dir.path());
    for file in [
        "config.json",
        "captions.jsonl",
        "czs_table.jsonl",
        "encoder_init.json",
        "encoder_final.json",
        "prototypes.json",
        "metrics.jsonl",
        "train_state.json",
        "eval_test.json",
    ] {
        assert!(dir.path().join(file).exists(), "missing {file}");
    }
    // the lock is released between invocations
    assert!(!dir.path().join("run.lock").exists());
}

#[test]
fn identical_seeds_give_identical_run_hashes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run_pipeline(a.path()), run_pipeline(b.path()));
}

#[test]
fn train_without_captions_names_describe() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["make-toy", "--classes", "3", "--seed", "1"]);
    let err = fail(dir.path(), &["train"]);
    assert!(err.contains("describe"), "{err}");
}

#[test]
fn train_without_dataset_names_make_toy() {
    let dir = tempfile::tempdir().unwrap();
    let err = fail(dir.path(), &["train"]);
    assert!(err.contains("make-toy"), "{err}");
}

#[test]
fn eval_before_train_names_train() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["make-toy", "--classes", "3", "--seed", "1"]);
    let err = fail(dir.path(), &["eval"]);
    assert!(err.contains("train"), "{err}");
}

#[test]
fn unknown_flag_prints_usage_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let err = fail(dir.path(), &["train", "--no-such-flag"]);
    assert!(err.to_lowercase().contains("usage"), "{err}");
}

#[test]
fn rerun_after_completion_is_a_noop() {
    let dir = tempfile::tempdir().unwrap();
    let first = run_pipeline(dir.path());
    let out = ok(dir.path(), TRAIN);
    assert!(out.contains("nothing to do"), "{out}");
    let out = ok(dir.path(), &["describe", "--provider", "stub", "--seed", "7"]);
    assert!(out.contains("0 generated"), "{out}");
    ok(dir.path(), &["eval"]);
    let second = ok(dir.path(), &["hash"]).trim().to_string();
    assert_eq!(first, second);
}

#[test]
fn interrupted_run_resumes_to_the_same_hash() {
    let straight = tempfile::tempdir().unwrap();
    let resumed = tempfile::tempdir().unwrap();
    let reference = run_pipeline(straight.path());

    let dir = resumed.path();
    ok(dir, &["make-toy", "--classes", "5", "--seed", "7"]);
    ok(dir, &["describe", "--provider", "stub", "--seed", "7"]);
    ok(dir, &["pseudo-label"]);
    // stop halfway (10 of 20 steps), then re-invoke with the full budget
    let mut short: Vec<&str> = TRAIN.to_vec();
    short[2] = "10";
    ok(dir, &short);
    ok(dir, TRAIN);
    ok(dir, &["eval"]);
    assert_eq!(ok(dir, &["hash"]).trim(), reference);
}

#[test]
fn flyp_checkpoint_refuses_prototype_bank() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(dir.path());
    // flip the recorded mode while a prototype checkpoint is on disk
    let cfg_path = dir.path().join("config.json");
    let cfg = std::fs::read_to_string(&cfg_path).unwrap();
    std::fs::write(&cfg_path, cfg.replace("\"latteclip\"", "\"flyp_pl\"")).unwrap();
    let err = fail(dir.path(), &["eval"]);
    assert!(err.contains("prototype bank"), "{err}");
}

#[test]
fn concurrent_writer_is_locked_out() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.lock"), "99999\n").unwrap();
    let err = fail(dir.path(), &["make-toy"]);
    assert!(err.contains("lock"), "{err}");
}

#[test]
fn external_provider_is_rejected_with_guidance() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["make-toy", "--classes", "3", "--seed", "2"]);
    let err = fail(dir.path(), &["describe", "--provider", "external"]);
    assert!(err.contains("stub"), "{err}");
}
