//! Re-runs every configuration under `docs/golden/` and compares the
//! in-memory outputs with the checked-in files. Numbers are compared to a
//! relative tolerance so FFT kernel differences between CPUs do not matter;
//! layout, headers, keys and every non-numeric token must match exactly.
//!
//! Regenerate with `calmedns <kind> --config docs/golden/<kind>/config.toml --out docs/golden/<kind>/out`.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use calmedns::io::{load_config, run_experiment, Experiment};

const REL: f64 = 1e-8;

fn golden_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/golden")
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= REL * a.abs().max(b.abs()).max(1e-12)
}

fn same_text(name: &str, got: &str, want: &str) {
    let split = |s: &str| -> Vec<String> {
        s.split(|c: char| c == ',' || c.is_whitespace() || c == '`' || c == '|')
            .map(str::to_string)
            .collect()
    };
    let (g, w) = (split(got), split(want));
    assert_eq!(g.len(), w.len(), "{name}: token count");
    for (a, b) in g.iter().zip(&w) {
        match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(x), Ok(y)) => assert!(close(x, y), "{name}: {a} vs {b}"),
            _ => assert_eq!(a, b, "{name}"),
        }
    }
}

fn same_json(path: &str, got: &Value, want: &Value) {
    match (got, want) {
        (Value::Number(a), Value::Number(b)) => {
            assert!(close(a.as_f64().unwrap(), b.as_f64().unwrap()), "{path}: {a} vs {b}")
        }
        (Value::Array(a), Value::Array(b)) => {
            assert_eq!(a.len(), b.len(), "{path}: length");
            for (i, (x, y)) in a.iter().zip(b).enumerate() {
                same_json(&format!("{path}[{i}]"), x, y);
            }
        }
        (Value::Object(a), Value::Object(b)) => {
            assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>(), "{path}: keys");
            for (k, x) in a {
                // digest of the binary payload, checked separately
                if k != "payload_sha256" {
                    same_json(&format!("{path}.{k}"), x, &b[k]);
                }
            }
        }
        _ => assert_eq!(got, want, "{path}"),
    }
}

fn same_snapshot(name: &str, got: &[u8], want: &[u8]) {
    assert_eq!(got.len(), want.len(), "{name}: length");
    assert_eq!(got[..11], want[..11], "{name}: header");
    for (a, b) in got[11..].chunks_exact(8).zip(want[11..].chunks_exact(8)) {
        let x = f64::from_le_bytes(a.try_into().unwrap());
        let y = f64::from_le_bytes(b.try_into().unwrap());
        assert!((x - y).abs() <= 1e-10, "{name}: {x} vs {y}");
    }
}

#[test]
fn golden_outputs_reproduce() {
    let mut dirs: Vec<PathBuf> = fs::read_dir(golden_root())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    assert_eq!(dirs.len(), Experiment::NAMES.split(", ").count());
    for dir in dirs {
        let kind: Experiment = dir.file_name().unwrap().to_str().unwrap().parse().unwrap();
        let cfg = load_config(&dir.join("config.toml"), Some(kind)).unwrap();
        let out = run_experiment(&cfg, None).unwrap();
        let mut want: Vec<String> = fs::read_dir(dir.join("out"))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        want.sort();
        assert_eq!(out.files.keys().cloned().collect::<Vec<_>>(), want, "{}", dir.display());
        for (name, bytes) in &out.files {
            let expected = fs::read(dir.join("out").join(name)).unwrap();
            let label = format!("{kind}/{name}");
            if name.ends_with(".cnsf") {
                same_snapshot(&label, bytes, &expected);
            } else if name.ends_with(".json") {
                let g: Value = serde_json::from_slice(bytes).unwrap();
                let w: Value = serde_json::from_slice(&expected).unwrap();
                same_json(&label, &g, &w);
            } else {
                same_text(&label, std::str::from_utf8(bytes).unwrap(), std::str::from_utf8(&expected).unwrap());
            }
        }
    }
}
