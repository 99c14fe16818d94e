use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn subflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = subflow(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small case-2 configuration with short ensemble, export and swarm sizes.
fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("case.toml");
    ok(&["config", "--preset", "case2", "--dims", "6", "8", "3", "--out", s(&path)]);
    let text = fs::read_to_string(&path)
        .unwrap()
        .replace("n_steps = 20", "n_steps = 6")
        .replace("n_real = 2000", "n_real = 12")
        .replace("n_lnk_train = 30", "n_lnk_train = 3")
        .replace("nt_train = 20", "nt_train = 6")
        .replace("n_lnk_virtual = 200", "n_lnk_virtual = 4")
        .replace("max_gen = 50", "max_gen = 3")
        .replace("pop_size = 20", "pop_size = 6")
        .replace("n_modes = 13", "n_modes = 4")
        .replace("obs_steps = 10", "obs_steps = 3");
    fs::write(&path, text).unwrap();
    path
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let mut rows = vec![r.headers().unwrap().iter().map(String::from).collect()];
    rows.extend(r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()));
    rows
}

#[test]
fn simulate_writes_bundle_and_well_table() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("sim");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let names: Vec<&str> = manifest["fields"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["name"].as_str().unwrap())
        .collect();
    for want in ["sim_lnk", "sim_potential", "sim_pressure", "sim_well_rate", "sim_well_bhp"] {
        assert!(names.contains(&want), "{want} missing from {names:?}");
    }
    let rows = read_csv(&out.join("wells.csv"));
    assert_eq!(rows[0], ["well_id", "step", "time_days", "rate_m3_per_day", "bhp_bar"]);
    assert_eq!(rows.len(), 1 + 4 * 6);
    for r in &rows[1..] {
        let bhp: f64 = r[4].parse().unwrap();
        assert!((bhp - 350.0).abs() < 1e-9);
        assert!(r[3].parse::<f64>().unwrap() > 0.0);
    }
}

#[test]
fn residual_check_thresholds_and_report() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("sim");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&out), "--field", "mean"]);
    let report = tmp.path().join("report.json");
    let stdout = ok(&["residual-check", "--bundle", s(&out), "--max-residual", "1e-2", "--out", s(&report)]);
    let summary: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!(summary["max_abs_residual"].as_f64().unwrap() < 1e-2);
    let full: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(full["pde_residual"].as_array().unwrap().len(), 1);
    assert_eq!(full["pde_residual"][0].as_array().unwrap().len(), 6);

    let strict = subflow(&["residual-check", "--bundle", s(&out), "--max-residual", "1e-30"]);
    assert_eq!(strict.status.code(), Some(3));
}

#[test]
fn export_then_check_training_set() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("ds");
    ok(&["export-dataset", "--config", s(&cfg), "--out", s(&out), "--workers", "2"]);
    let stdout = ok(&[
        "residual-check",
        "--bundle",
        s(&out),
        "--prefix",
        "train",
        "--predicted",
        "train_potential",
    ]);
    let summary: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(summary["data"].as_f64().unwrap(), 0.0);
    assert_eq!(summary["n_physics"].as_u64().unwrap(), 3);
}

#[test]
fn uq_and_metrics() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let uq = tmp.path().join("uq");
    ok(&["uq", "--config", s(&cfg), "--out", s(&uq), "--workers", "2"]);
    let stats = read_csv(&uq.join("well_stats.csv"));
    assert_eq!(stats.len(), 1 + 4 * 6);
    assert!(stats[1..].iter().all(|r| r[4].parse::<f64>().unwrap() >= 0.0));

    let fields = tmp.path().join("fields");
    ok(&["genfield", "--config", s(&cfg), "--n", "3", "--out", s(&fields)]);
    let table = tmp.path().join("metrics.csv");
    let pred = format!("{}:lnk", s(&fields));
    ok(&["metrics", "--pred", &pred, "--reference", &pred, "--out", s(&table)]);
    let rows = read_csv(&table);
    assert_eq!(rows.len(), 1 + 3 + 1);
    assert_eq!(rows[4][0], "pooled");
    assert_eq!(rows[4][1].parse::<f64>().unwrap(), 0.0);
    assert_eq!(rows[4][2].parse::<f64>().unwrap(), 1.0);
}

#[test]
fn invert_writes_trace_and_result() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("inv");
    ok(&["invert", "--config", s(&cfg), "--out", s(&out)]);
    let trace = read_csv(&out.join("fitness_trace.csv"));
    assert_eq!(trace.len(), 1 + 4);
    let f: Vec<f64> = trace[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(f.windows(2).all(|w| w[1] <= w[0]));
    let result: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("result.json")).unwrap()).unwrap();
    assert_eq!(result["best"].as_array().unwrap().len(), 4);
    assert!(out.join("field/manifest.json").exists());
    assert!(out.join("observations.json").exists());

    // replaying the written observations takes the same path
    let again = tmp.path().join("inv2");
    ok(&[
        "invert",
        "--config",
        s(&cfg),
        "--out",
        s(&again),
        "--observations",
        s(&out.join("observations.json")),
    ]);
    let replay: serde_json::Value = serde_json::from_str(&fs::read_to_string(again.join("result.json")).unwrap()).unwrap();
    assert_eq!(replay["best_fitness"], result["best_fitness"]);
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.toml");
    let cfg = small_config(tmp.path());
    fs::write(&bad, fs::read_to_string(&cfg).unwrap().replace("[grid]", "[grid]\nbogus = 1")).unwrap();
    let out = tmp.path().join("x");
    assert_eq!(subflow(&["simulate", "--config", s(&bad), "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(subflow(&["simulate", "--nope"]).status.code(), Some(2));
    assert_eq!(
        subflow(&["metrics", "--pred", "nocolon", "--reference", "x:y"]).status.code(),
        Some(2)
    );
    // bundle that does not exist is an I/O failure, not a config error
    let missing = format!("{}:f", s(&tmp.path().join("none")));
    assert_eq!(
        subflow(&["metrics", "--pred", &missing, "--reference", &missing]).status.code(),
        Some(1)
    );
}
