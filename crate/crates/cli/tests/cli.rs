//! Drives the built binary end to end.

use std::path::Path;
use std::process::{Command, Output};

fn coarse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coarse"))
        .args(["--threads", "2"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_solve_surplus_flow() {
    let dir = tempfile::tempdir().unwrap();
    let pop = dir.path().join("pop.csv");
    let policy = dir.path().join("policy.json");
    let trace = dir.path().join("trace.jsonl");
    let deltas = dir.path().join("surplus.csv");

    let out = coarse(&["synth", "--n", "60", "--seed", "4", "--output", path(&pop)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = coarse(&[
        "solve",
        "--population",
        path(&pop),
        "--segments",
        "3",
        "--output",
        path(&policy),
        "--trace",
        path(&trace),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("ratio to granular"));

    let file: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&policy).unwrap()).unwrap();
    assert_eq!(file["treatments"].as_array().unwrap().len(), 3);
    assert!(std::fs::read_to_string(&trace).unwrap().lines().count() >= 1);

    let out = coarse(&[
        "surplus",
        "--population",
        path(&pop),
        "--policy",
        path(&policy),
        "--output",
        path(&deltas),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let mut rows = csv::Reader::from_path(&deltas).unwrap();
    let mut n = 0;
    for r in rows.records() {
        let r = r.unwrap();
        let v: Vec<f64> = (1..4).map(|k| r[k].parse().unwrap()).collect();
        assert!((v[0] + v[1] - v[2]).abs() <= 1e-12);
        assert!(v[1] <= 1e-12);
        n += 1;
    }
    assert_eq!(n, 60);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let pop = dir.path().join("pop.csv");
    assert!(coarse(&["synth", "--n", "10", "--output", path(&pop)])
        .status
        .success());
    let out = coarse(&["solve", "--population", path(&pop), "--segments", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let out = coarse(&["solve", "--population", path(&pop), "--update", "sideways"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn data_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "id,alpha_1,beta_1,cost_scale_1\nx,0,abc,1\n").unwrap();
    let out = coarse(&[
        "solve",
        "--population",
        path(&bad),
        "--bounds",
        "5",
        "--segments",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    let out = coarse(&[
        "solve",
        "--population",
        path(&dir.path().join("missing.csv")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn experiment_writes_its_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("exp.toml");
    std::fs::write(
        &spec,
        "synth_n = 80\nseed = 5\nmax_segments = 3\nbootstrap = 3\nnum_starts = 2\n",
    )
    .unwrap();
    let out_dir = dir.path().join("report");
    let out = coarse(&["experiment", path(&spec), "--output", path(&out_dir)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let mut names: Vec<String> = std::fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), 8, "{names:?}");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["files"].as_object().unwrap().len(), 7);
}
