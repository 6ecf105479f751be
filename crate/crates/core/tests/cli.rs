// Exercises the binary: exit codes, file layout, config overrides.

use std::path::Path;
use std::process::{Command, Output};

fn fcdtt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fcdtt"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("config.json");
    let cfg = serde_json::json!({
        "seed": 2,
        "synth": { "n_links": 10, "n_days": 9, "paths_per_day": 4, "seed": 4 },
        "train": { "split": [3, 3, 3], "folds": 3 }
    });
    std::fs::write(&path, cfg.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn full_pipeline_writes_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    for cmd in ["synth", "preprocess", "train", "evaluate"] {
        let o = fcdtt(&[cmd, "--config", &config, "--out", out_s]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["network.json", "truth.json", "paths.jsonl", "model.json", "split.json", "report.json", "predictions.csv"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    assert_eq!(std::fs::read_dir(out.join("traces")).unwrap().count(), 9);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["algorithms"].as_object().unwrap().len(), 3);

    let o = fcdtt(&["evaluate", "--config", &config, "--out", out_s, "--seeds", "2"]);
    assert!(o.status.success());
    assert!(out.join("report_seeds.json").is_file());
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"synth": {"n_links": 4, "colour": "red"}}"#).unwrap();
    let out = dir.path().to_str().unwrap();

    let o = fcdtt(&["synth", "--config", bad.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));

    // nothing to preprocess yet
    assert_eq!(fcdtt(&["preprocess", "--out", out]).status.code(), Some(2));
    assert_eq!(fcdtt(&["train", "--out", out]).status.code(), Some(2));
    assert_eq!(fcdtt(&["synth", "--out", out, "--threads", "0"]).status.code(), Some(2));
}

#[test]
fn corrupt_inputs_are_not_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    assert!(fcdtt(&["synth", "--config", &config, "--out", out_s]).status.success());
    std::fs::write(out.join("network.json"), "{ not json").unwrap();
    let o = fcdtt(&["preprocess", "--config", &config, "--out", out_s]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let read = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = fcdtt(&["synth", "--config", &config, "--out", out.to_str().unwrap(), "--seed", seed]);
        assert!(o.status.success());
        std::fs::read_to_string(out.join("truth.json")).unwrap()
    };
    assert_eq!(read("a", "7"), read("b", "7"));
    assert_ne!(read("a", "7"), read("c", "8"));
}
