// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn duodag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_duodag")).args(args).output().unwrap()
}

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
        .display()
        .to_string()
}

fn run_into(dir: &Path, name: &str, seed: &str) -> Output {
    duodag(&["run", &scenario(name), "--seed", seed, "--out", dir.to_str().unwrap(), "--duration-ms", "1500"])
}

fn logs(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<_> = fs::read_dir(dir.join("commits")).unwrap().map(|e| e.unwrap().path()).collect();
    out.sort();
    out
}

fn strs(paths: &[PathBuf]) -> Vec<&str> {
    paths.iter().map(|p| p.to_str().unwrap()).collect()
}

#[test]
fn run_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into(dir.path(), "faulty_async.toml", "3");
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let logs = logs(dir.path());
    assert_eq!(logs.len(), 9);
    let mut args = vec!["verify"];
    args.extend(strs(&logs));
    let out = duodag(&args);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn forged_log_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_into(dir.path(), "fault_free.toml", "5").status.success());
    let logs = logs(dir.path());
    let text = fs::read_to_string(&logs[1]).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.swap(3, 4);
    fs::write(&logs[1], lines.join("\n") + "\n").unwrap();
    let out = duodag(&["verify", logs[0].to_str().unwrap(), logs[1].to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4"), "{err}");
}

#[test]
fn duplicate_delivery_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_into(dir.path(), "fault_free.toml", "5").status.success());
    let logs = logs(dir.path());
    let text = fs::read_to_string(&logs[0]).unwrap();
    let first = text.lines().next().unwrap();
    fs::write(&logs[0], format!("{text}{first}\n")).unwrap();
    let out = duodag(&["verify", logs[0].to_str().unwrap(), logs[1].to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("twice"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = duodag(&["run", &scenario("fault_free.toml"), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));

    assert!(run_into(dir.path(), "fault_free.toml", "1").status.success());
    let one = logs(dir.path());
    assert_eq!(duodag(&["verify", one[0].to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(duodag(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(duodag(&["summarize", "/nonexistent"]).status.code(), Some(1));
}

#[test]
fn excess_faults_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into(dir.path(), "too_many_faults.toml", "1");
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceed"));
    assert!(!dir.path().join("report.jsonl").exists());
}

#[test]
fn watchdog_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenario("fault_free.toml")).unwrap() + "\n[watchdog]\nmax_events = 500\n";
    let path = dir.path().join("s.toml");
    fs::write(&path, text).unwrap();
    let out = duodag(&["run", path.to_str().unwrap(), "--seed", "1", "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn same_seed_same_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run_into(a.path(), "faulty_async.toml", "11").status.success());
    assert!(run_into(b.path(), "faulty_async.toml", "11").status.success());
    for name in ["report.jsonl", "summary.json"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
    }
    for (x, y) in logs(a.path()).iter().zip(logs(b.path())) {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
    }
    let c = tempfile::tempdir().unwrap();
    assert!(run_into(c.path(), "faulty_async.toml", "12").status.success());
    assert_ne!(fs::read(a.path().join("report.jsonl")).unwrap(), fs::read(c.path().join("report.jsonl")).unwrap());
}

#[test]
fn summarize_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into(dir.path(), "fault_free.toml", "2");
    assert!(out.status.success());
    let summary = fs::read_to_string(dir.path().join("summary.json")).unwrap();
    let again = duodag(&["summarize", dir.path().to_str().unwrap()]);
    assert!(again.status.success());
    assert_eq!(String::from_utf8(again.stdout).unwrap(), summary);
    assert!(summary.contains("median_latency_ms"));
}
