use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn calmedns(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_calmedns"))
        .args(args)
        .env("CALMEDNS_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

const SMALL: &str = "grid.n = 8\nstepper.dt = 0.01\nstepper.span = 0.5\nstepper.stride = 5\n";

#[test]
fn config_errors_are_all_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", "model.nu = -1\ncalming.variant = \"z5\"\nbogus.key = 1\n");
    let out = calmedns(&["simulate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "config");
    let msgs = err["messages"].to_string();
    for needle in ["model.nu", "z1, z2, z3, z4, identity", "bogus.key"] {
        assert!(msgs.contains(needle), "{needle} missing from {msgs}");
    }
}

#[test]
fn every_output_embeds_the_config_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.toml", &format!("{SMALL}experiment.checkpoint_every = 25\n"));
    let out_dir = tmp.path().join("out");
    let out = calmedns(&["simulate", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let hash = summary(&out_dir)["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    let mut seen = 0;
    for entry in fs::read_dir(&out_dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "cnsf") {
            continue;
        }
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains(&hash), "{} lacks the hash", path.display());
        seen += 1;
    }
    assert!(seen >= 6);
    let series = fs::read_to_string(out_dir.join("series.csv")).unwrap();
    assert_eq!(series.lines().next().unwrap(), format!("# config_hash: {hash}"));
}

#[test]
fn seed_override_changes_hash_and_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.toml", SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(calmedns(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap()]).status.success());
    assert!(calmedns(&["simulate", "--config", &cfg, "--out", b.to_str().unwrap(), "--seed", "9"]).status.success());
    let (sa, sb) = (summary(&a), summary(&b));
    assert_ne!(sa["config_hash"], sb["config_hash"]);
    assert_eq!(sb["seeds"], serde_json::json!([9]));
    assert_ne!(fs::read(a.join("series.csv")).unwrap(), fs::read(b.join("series.csv")).unwrap());
}

#[test]
fn resume_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.toml", &format!("{SMALL}experiment.checkpoint_every = 25\n"));
    let full = tmp.path().join("full");
    assert!(calmedns(&["simulate", "--config", &cfg, "--out", full.to_str().unwrap()]).status.success());
    let resumed = tmp.path().join("resumed");
    let ck = full.join("checkpoint_00000025.json");
    let out = calmedns(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        resumed.to_str().unwrap(),
        "--resume",
        ck.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(full.join("final.cnsf")).unwrap(), fs::read(resumed.join("final.cnsf")).unwrap());

    let other = write(tmp.path(), "other.toml", &format!("{SMALL}experiment.checkpoint_every = 25\nmodel.nu = 2\n"));
    let out = calmedns(&["simulate", "--config", &other, "--out", resumed.to_str().unwrap(), "--resume", ck.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(resumed.join("failure.json").exists());
}

#[test]
fn failing_monitor_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "a3.toml", "grid.n = 8\ncalming.eps = 0.2\n");
    let dir = tmp.path().join("out");
    let out = calmedns(&["validate", "--config", &cfg, "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FAIL A3") && stdout.contains("PASS A1"));
    assert_eq!(summary(&dir)["passed"], false);
}

#[test]
fn verify_calming_reports_four_blocks() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", "experiment.calming_samples = 2000\n");
    let dir = tmp.path().join("out");
    assert!(calmedns(&["verify-calming", "--config", &cfg, "--out", dir.to_str().unwrap()]).status.success());
    let s = summary(&dir);
    assert_eq!(s["experiment"], "verify-calming");
    assert!(s["monitors"].as_array().unwrap().len() >= 4);
}
