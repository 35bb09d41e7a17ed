use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use patchbench::checkpoint::Checkpoint;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_patchbench"))
            .current_dir(self.dir.path())
            .env_remove("PATCHBENCH_SEED")
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }

    /// Small bundle plus a trained model under `bundle/` and `model/`.
    fn trained(n_train: &str) -> Self {
        let ws = Self::new();
        ws.ok(&["gen", "--n-train", n_train, "--out", "bundle"]);
        ws.ok(&["train", "--bundle", "bundle", "--out", "model"]);
        ws
    }
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap()
}

#[test]
fn gen_is_deterministic() {
    let ws = Workspace::new();
    ws.ok(&["gen", "--seed", "7", "--shots", "10", "--out", "a"]);
    ws.ok(&["gen", "--seed", "7", "--shots", "10", "--out", "b"]);
    for f in ["X.tsv", "Xdebug.tsv", "Xtest.tsv", "Xdebugtest.tsv", "manifest.json"] {
        assert_eq!(read(&ws.path("a").join(f)), read(&ws.path("b").join(f)), "{f}");
    }
}

#[test]
fn seed_falls_back_to_env() {
    let ws = Workspace::new();
    let out = Command::new(env!("CARGO_BIN_EXE_patchbench"))
        .current_dir(ws.dir.path())
        .env("PATCHBENCH_SEED", "7")
        .args(["gen", "--out", "env"])
        .output()
        .unwrap();
    assert!(out.status.success());
    ws.ok(&["gen", "--seed", "7", "--out", "flag"]);
    assert_eq!(read(&ws.path("env/X.tsv")), read(&ws.path("flag/X.tsv")));
}

#[test]
fn usage_and_config_errors_exit_two() {
    let ws = Workspace::new();
    let out = ws.run(&["gen", "--shots", "2000", "--n-phenomenon", "1000", "--out", "d"]);
    assert_eq!(out.status.code(), Some(2));
    let out = ws.run(&["compare", "--model", "m", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
    let out = ws.run(&["debug", "--bundle", "b", "--model", "m", "--out", "o", "--method", "adam"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for name in ["debug-only", "l2", "linf", "kl", "in-danger", "mixed-in", "oversampling"] {
        assert!(err.contains(name), "{err}");
    }
    let out = ws.run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_one() {
    let ws = Workspace::new();
    let out = ws.run(&["train", "--bundle", "missing", "--out", "m"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_prints_before_line_and_is_deterministic() {
    let ws = Workspace::new();
    ws.ok(&["gen", "--n-train", "1500", "--out", "bundle"]);
    let stdout = ws.ok(&["train", "--bundle", "bundle", "--out", "m1"]);
    assert!(stdout.starts_with("Before debugging ("), "{stdout}");
    ws.ok(&["train", "--bundle", "bundle", "--out", "m2"]);
    for f in ["base.ckpt", "init.ckpt"] {
        assert_eq!(read(&ws.path("m1").join(f)), read(&ws.path("m2").join(f)), "{f}");
    }
    let mut bytes = read(&ws.path("m1/base.ckpt"));
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    fs::write(ws.path("m1/base.ckpt"), bytes).unwrap();
    let out = ws.run(&["debug", "--bundle", "bundle", "--model", "m1", "--method", "debug-only", "--out", "d"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));
}

#[test]
fn debug_reports_w_and_deviation() {
    let ws = Workspace::trained("50000");
    let stdout = ws.ok(&["debug", "--bundle", "bundle", "--model", "model", "--method", "in-danger", "--seed", "1", "--out", "id"]);
    assert!(stdout.contains("w_found=20 of 20"), "{stdout}");
    let report = fs::read_to_string(ws.path("id/report.txt")).unwrap();
    assert!(report.contains("w_found=20"));
    assert!(ws.path("id/patched.ckpt").exists() && ws.path("id/run_manifest.json").exists());

    ws.ok(&["debug", "--bundle", "bundle", "--model", "model", "--method", "linf", "--delta", "0.1", "--out", "linf"]);
    let base = Checkpoint::load(&ws.path("model/base.ckpt")).unwrap();
    let patched = Checkpoint::load(&ws.path("linf/patched.ckpt")).unwrap();
    assert!(patched.params.linf_distance(&base.params) <= 0.1 + 1e-12);
    let report = fs::read_to_string(ws.path("linf/report.txt")).unwrap();
    let line = report.lines().find(|l| l.starts_with("max param deviation")).unwrap();
    let linf: f64 = line.split("linf ").nth(1).unwrap().split(',').next().unwrap().parse().unwrap();
    assert!(linf <= 0.1, "{line}");
}

#[test]
fn kl_with_zero_lambda_matches_debug_only() {
    let ws = Workspace::trained("2000");
    ws.ok(&["debug", "--bundle", "bundle", "--model", "model", "--method", "kl", "--lambda", "0", "--seed", "1", "--out", "kl"]);
    ws.ok(&["debug", "--bundle", "bundle", "--model", "model", "--method", "debug-only", "--seed", "1", "--out", "do"]);
    assert_eq!(read(&ws.path("kl/patched.ckpt")), read(&ws.path("do/patched.ckpt")));
}

#[test]
fn compare_sweep_and_report() {
    let ws = Workspace::trained("2000");
    let stdout = ws.ok(&["compare", "--bundle", "bundle", "--model", "model", "--methods", "all", "--seeds", "2", "--serial-timing", "--out", "cmp"]);
    let table = fs::read_to_string(ws.path("cmp/report.txt")).unwrap();
    for label in ["Debug only", "L2", "Linf", "K-L", "In-danger (ours)", "Mixed in", "Oversampling"] {
        assert_eq!(table.lines().filter(|l| l.starts_with(&format!("{label} "))).count(), 1, "{label}\n{table}");
    }
    let timing = fs::read_to_string(ws.path("cmp/timing.txt")).unwrap();
    for row in ["In-danger (ours) - total", "debug-only fine-tuning", "finding new misclassifications W", "final fine-tuning"] {
        assert!(timing.contains(row), "{timing}");
    }
    assert!(stdout.contains("Before debugging"));
    let records = fs::read_to_string(ws.path("cmp/records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 14);

    ws.ok(&["sweep", "--bundle", "bundle", "--model", "model", "--methods", "debug-only,in-danger", "--shots", "5,10,20", "--resamples", "2", "--out", "sw"]);
    let grid = fs::read_to_string(ws.path("sw/sweep.txt")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 3 * 2);
    assert!(grid.contains('±'));

    let out = ws.ok(&["report", "--records", "cmp/records.jsonl", "--timing"]);
    assert_eq!(out, format!("{table}\n{timing}"));
}

#[test]
fn replay_reproduces_outputs() {
    let ws = Workspace::trained("1500");
    ws.ok(&["debug", "--bundle", "bundle", "--model", "model", "--method", "oversampling", "--seed", "3", "--out", "run"]);
    ws.ok(&["replay", "--manifest", "run/run_manifest.json", "--out", "again"]);
    assert_eq!(read(&ws.path("run/patched.ckpt")), read(&ws.path("again/patched.ckpt")));
    assert_eq!(read(&ws.path("run/report.txt")), read(&ws.path("again/report.txt")));
    let manifest: serde_json::Value = serde_json::from_slice(&read(&ws.path("run/run_manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "debug");
    assert_eq!(manifest["config"]["method"], "oversampling");
    assert_eq!(manifest["seeds"], serde_json::json!([3]));
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    assert!(manifest["finished_unix_s"].as_f64() >= manifest["started_unix_s"].as_f64());
}
