//! End-to-end tests of the `idsgan` binary: exit codes, staged flows, and
//! flag overrides.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn idsgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_idsgan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_toy_config(dir: &Path, out_name: &str) -> PathBuf {
    let path = dir.join("pipeline.toml");
    let text = format!(
        r#"dataset = "csv"
inputs = ["{}"]
out_dir = "{}"
seed = 11
synthetic_per_class = [0, 100]

[train]
epochs = 2
batch_size = 64

[gan]
epochs = 40
noise_dim = 8
"#,
        fixture("toy.csv").display(),
        dir.join(out_name).display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_all_completes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_toy_config(dir.path(), "out");
    let out = idsgan(&["run-all", "--config", config.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("baseline: accuracy"));
    assert!(stdout.contains("augmented: accuracy"));
    for file in [
        "out/reports/baseline/metrics.json",
        "out/reports/baseline/confusion.csv",
        "out/reports/baseline/curves.csv",
        "out/reports/augmented/metrics.json",
        "out/reports/comparison.csv",
        "out/effective_config.toml",
    ] {
        assert!(dir.path().join(file).exists(), "missing {file}");
    }
}

#[test]
fn staged_flow_matches_contract() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_toy_config(dir.path(), "out");
    let c = config.to_str().unwrap();

    // synth before gan names the missing stage
    let pre = idsgan(&["prepare", "--config", c]);
    assert!(pre.status.success());
    let synth = idsgan(&["synth", "--config", c]);
    assert_eq!(synth.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&synth.stderr).contains("run `gan` first"));

    for cmd in ["train", "gan", "synth", "retrain", "evaluate", "report"] {
        let out = idsgan(&[cmd, "--config", c]);
        assert!(
            out.status.success(),
            "{cmd} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    assert!(dir.path().join("out/reports/comparison.csv").exists());
}

#[test]
fn missing_config_is_usage_error() {
    let out = idsgan(&["run-all"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));
}

#[test]
fn unreadable_config_is_usage_error() {
    let out = idsgan(&["run-all", "--config", "/nonexistent/nope.toml"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn malformed_input_data_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "f0,f1,label\n1.0,2.0,neg\n3.0,pos\n").unwrap();
    let config = dir.path().join("pipeline.toml");
    std::fs::write(
        &config,
        format!(
            "dataset = \"csv\"\ninputs = [\"{}\"]\nout_dir = \"{}\"\n",
            bad.display(),
            dir.path().join("out").display()
        ),
    )
    .unwrap();
    let out = idsgan(&["prepare", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("prepare"), "stderr: {stderr}");
}

#[test]
fn flags_override_config_values() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_toy_config(dir.path(), "ignored");
    let out_dir = dir.path().join("flagged");
    let out = idsgan(&[
        "prepare",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "77",
        "--epochs",
        "1",
        "--batch",
        "16",
    ]);
    assert!(out.status.success());
    let echoed = std::fs::read_to_string(out_dir.join("effective_config.toml")).unwrap();
    assert!(echoed.contains("seed = 77"));
    assert!(echoed.contains("epochs = 1"));
    assert!(echoed.contains("batch_size = 16"));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let out = idsgan(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
}
