use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn silentrisk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_silentrisk"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("SOURCE_DATE_EPOCH")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Synthetic inputs in `dir` with a config shrunk for test speed.
fn synth(dir: &Path, n: usize, scenario: &str) -> PathBuf {
    let out = silentrisk(&["synth", "--n", &n.to_string(), "--scenario", scenario, "--seed", "3", "--out", dir.to_str().unwrap()]);
    ok(&out);
    let config = dir.join("config.toml");
    let text = std::fs::read_to_string(&config).unwrap();
    let text = text
        .replace("n_rounds = 500", "n_rounds = 60")
        .replace("forest_trees = 300", "forest_trees = 30")
        .replace("k_max = 8", "k_max = 4")
        .replace("permutations = 999", "permutations = 199");
    std::fs::write(&config, text).unwrap();
    config
}

#[test]
fn full_run_is_reproducible_stage_by_stage() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth(dir.path(), 80, "threshold");
    let cfg = config.to_str().unwrap();
    let a = dir.path().join("a");
    ok(&silentrisk(&["run", "--config", cfg, "--out", a.to_str().unwrap()]));

    let b = dir.path().join("b");
    for stage in ["ingest", "train", "explain", "cluster", "spatial", "report"] {
        ok(&silentrisk(&[stage, "--config", cfg, "--out", b.to_str().unwrap(), "--threads", "2"]));
    }
    let ma = std::fs::read(a.join("manifest.json")).unwrap();
    assert_eq!(ma, std::fs::read(b.join("manifest.json")).unwrap());

    let manifest: Value = serde_json::from_slice(&ma).unwrap();
    assert_eq!(manifest["counts"]["counties_ingested"], 80);
    assert_eq!(manifest["counts"]["suppressed"], 20);
    assert_eq!(manifest["seed"], 3);
    assert!(manifest["timestamp"].is_null());
    let report: Value = serde_json::from_slice(&std::fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["meta"]["seed"], 3);
    assert_eq!(report["model_comparison"]["rows"].as_array().unwrap().len(), 4);
    let geo: Value = serde_json::from_slice(&std::fs::read(a.join("lisa.geojson")).unwrap()).unwrap();
    assert_eq!(geo["type"], "FeatureCollection");
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth(dir.path(), 40, "null");
    let out = dir.path().join("o");
    ok(&silentrisk(&["ingest", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "99"]));
    let text = std::fs::read_to_string(out.join("counties.csv")).unwrap();
    assert!(text.lines().next().unwrap().contains("seed=99"));
}

#[test]
fn missing_source_file_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth(dir.path(), 30, "null");
    std::fs::remove_file(dir.path().join("ahrf.csv")).unwrap();
    let out = silentrisk(&["ingest", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ahrf"));
}

#[test]
fn stage_before_its_prerequisite_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth(dir.path(), 30, "null");
    for stage in ["train", "explain", "cluster", "spatial", "report"] {
        let out = silentrisk(&[stage, "--config", config.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(4), "{stage}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("missing output"), "{stage}");
    }
}

#[test]
fn all_zero_deaths_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth(dir.path(), 30, "null");
    let path = dir.path().join("mortality.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let zeroed: Vec<String> = text
        .lines()
        .map(|line| {
            let mut cells: Vec<&str> = line.split(',').collect();
            if cells.len() == 4 && cells[2].chars().all(|c| c.is_ascii_digit()) {
                cells[2] = "0";
            }
            cells.join(",")
        })
        .collect();
    std::fs::write(&path, zeroed.join("\n")).unwrap();
    let out = silentrisk(&["ingest", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bad_arguments_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(silentrisk(&["synth", "--n", "19", "--out", d]).status.code(), Some(2));
    assert_eq!(silentrisk(&["synth", "--scenario", "spiral", "--out", d]).status.code(), Some(2));
    assert_eq!(silentrisk(&["ingest", "--folds", "1"]).status.code(), Some(2));
    assert_eq!(silentrisk(&["nonsense"]).status.code(), Some(2));
}
