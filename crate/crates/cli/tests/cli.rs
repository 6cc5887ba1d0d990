use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lvtopo_core::{brute_force_equivalence, build_fixture, GridTopology};

fn lvtopo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lvtopo"))
        .args(args)
        .env_remove("LVTOPO_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = lvtopo(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn generate_writes_snapshots_for_every_leaf() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    ok(&[
        "generate",
        "--fixture",
        "sys11",
        "--samples",
        "1000",
        "--seed",
        "7",
        "--out-dir",
        s(&out),
    ]);
    let csv = fs::read_to_string(out.join("measurements.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,leaf_id,V_volts,I_amps"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 1001 * 5);
    let snapshots: std::collections::BTreeSet<&str> =
        rows.iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(snapshots.len(), 1001);
    let truth =
        GridTopology::from_json(&fs::read_to_string(out.join("topology.json")).unwrap()).unwrap();
    assert_eq!(truth, build_fixture("sys11").unwrap());
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    let args = [
        "generate",
        "--fixture",
        "sys6",
        "--samples",
        "200",
        "--seed",
        "3",
        "--out-dir",
        s(&out),
    ];
    ok(&args);
    let first = read_dir_bytes(&out);
    ok(&args);
    assert_eq!(read_dir_bytes(&out), first);
    assert_eq!(first.len(), 3);
}

#[test]
fn one_sample_is_a_usage_error() {
    let out = lvtopo(&["generate", "--fixture", "sys6", "--samples", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--samples"));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    fs::write(&config, r#"{"fixture": "sys6", "samples": 50, "seed": 1}"#).unwrap();
    let out = dir.path().join("g");
    let status = Command::new(env!("CARGO_BIN_EXE_lvtopo"))
        .args(["generate", "--seed", "4", "--out-dir", s(&out)])
        .env("LVTOPO_CONFIG", &config)
        .output()
        .unwrap();
    assert!(status.status.success());
    let written: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("run_config.json")).unwrap()).unwrap();
    assert_eq!(written["samples"], 50);
    assert_eq!(written["seed"], 4);
    assert_eq!(written["fixture"], "sys6");
}

#[test]
fn recover_scores_against_truth() {
    let dir = tempfile::tempdir().unwrap();
    let (g, r) = (dir.path().join("g"), dir.path().join("r"));
    ok(&[
        "generate",
        "--fixture",
        "sys15",
        "--samples",
        "1000",
        "--out-dir",
        s(&g),
    ]);
    let stdout = ok(&[
        "recover",
        "--measurements",
        s(&g.join("measurements.csv")),
        "--truth",
        s(&g.join("topology.json")),
        "--out-dir",
        s(&r),
        "--dump-matrices",
    ]);
    assert!(stdout.contains("recovery_ratio=1\n"));
    let steps = fs::read_to_string(r.join("steps.txt")).unwrap();
    assert!(steps
        .lines()
        .last()
        .unwrap()
        .starts_with("Step 4: Nodes 11, 12, 13, 14, 15"));
    for name in ["correlation", "precision", "distance"] {
        assert!(r.join(format!("matrices/layer_4_{name}.csv")).is_file());
    }
    assert!(r.join("run_config.json").is_file());
}

#[test]
fn recovered_export_matches_truth() {
    let dir = tempfile::tempdir().unwrap();
    let (g, r) = (dir.path().join("g"), dir.path().join("r"));
    ok(&[
        "generate",
        "--fixture",
        "sys11",
        "--samples",
        "1000",
        "--out-dir",
        s(&g),
    ]);
    ok(&[
        "recover",
        "--measurements",
        s(&g.join("measurements.csv")),
        "--out-dir",
        s(&r),
    ]);
    let json = ok(&[
        "export",
        "--topology",
        s(&r.join("recovered.json")),
        "--format",
        "json",
    ]);
    let recovered = GridTopology::from_json(&json).unwrap();
    assert!(brute_force_equivalence(&build_fixture("sys11").unwrap(), &recovered).unwrap());
}

#[test]
fn six_node_dot() {
    let dot = ok(&["export", "--fixture", "sys6", "--format", "dot"]);
    assert_eq!(dot.matches("shape=").count(), 6);
    assert_eq!(dot.matches(" -> ").count(), 5);
    assert_eq!(dot, ok(&["export", "--fixture", "sys6"]));
}

#[test]
fn unknown_format_fails() {
    let out = lvtopo(&["export", "--fixture", "sys6", "--format", "svg"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown format"));
}

#[test]
fn benchmark_writes_sorted_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b");
    let stdout = ok(&[
        "benchmark",
        "--fixture",
        "sys11",
        "--samples",
        "1000,100",
        "--seeds",
        "3",
        "--jobs",
        "2",
        "--out-dir",
        s(&out),
    ]);
    assert!(stdout.contains("1000,1.0000"));
    let csv = fs::read_to_string(out.join("benchmark.csv")).unwrap();
    let keys: Vec<(usize, u64)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect();
    assert_eq!(
        keys,
        vec![
            (100, 0),
            (100, 1),
            (100, 2),
            (1000, 0),
            (1000, 1),
            (1000, 2)
        ]
    );
}

#[test]
fn benchmark_needs_sample_counts() {
    let out = lvtopo(&["benchmark", "--fixture", "sys11"]);
    assert_eq!(out.status.code(), Some(2));
}
