//! The binary's exit codes and help text.

use std::process::{Command, Output};

fn mixlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixlab")).args(args).output().unwrap()
}

#[test]
fn help_lists_every_config_key() {
    let out = mixlab(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for key in [
        "ratio",
        "batch_size",
        "lr_max",
        "warmup_fraction",
        "quick_eval_every",
        "d_model",
        "precision",
    ] {
        assert!(text.contains(key), "help is missing {key}");
    }
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    for args in [
        vec!["run", "--out", out_dir, "--set", "no_such_key=1"],
        vec!["run", "--out", out_dir, "--ratio", "0:0"],
        vec!["run", "--out", out_dir, "--ratio", "7:1", "--batch-size", "60"],
        vec!["suite", "--out", out_dir, "--set", "foundation.lr_max=abc"],
        vec!["run", "--bogus-flag"],
    ] {
        let out = mixlab(&args);
        assert_eq!(
            out.status.code(),
            Some(1),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn report_without_a_baseline_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mixlab(&["report", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mixlab(&["eval", dir.path().join("absent.ckpt").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn small_run_writes_logs_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = mixlab(&[
        "run",
        "--out",
        out_dir,
        "--ratio",
        "3:1",
        "--epochs",
        "1",
        "--batch-size",
        "16",
        "--quiet",
        "--quick-eval-every",
        "4",
        "--set",
        "experiment=tiny",
        "--set",
        "train_count=120",
        "--set",
        "val_count=40",
        "--set",
        "d_model=16",
        "--set",
        "n_heads=2",
        "--set",
        "d_ff=32",
        "--set",
        "quick_eval_size=20",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["tiny.metrics.jsonl", "tiny.best.ckpt", "tiny.final.ckpt"] {
        assert!(dir.path().join(file).exists(), "{file}");
    }
    let eval = mixlab(&["eval", dir.path().join("tiny.final.ckpt").to_str().unwrap()]);
    assert!(eval.status.success());
    let text = String::from_utf8(eval.stdout).unwrap();
    assert!(
        text.contains("MATH accuracy") && text.contains("NLI accuracy"),
        "{text}"
    );
}
