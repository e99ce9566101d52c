//! The `qwalk` binary end to end: exit codes, output layout, manifests,
//! analysis and rendering.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qwalk::io::{read_matrix_csv, read_records, RecordKind, RunManifest, RunStatus};

fn qwalk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qwalk")).args(args).output().expect("binary runs")
}

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_scenario_fails_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = qwalk(&["run", "--scenario", "no/such/file.toml", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert!(err["message"].as_str().unwrap().contains("no/such/file.toml"));
}

#[test]
fn usage_errors_exit_two_and_write_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let scenario = repo("scenarios/ctqw_two_walkers.toml");
    for args in [
        vec!["run", "--scenario", s(&scenario), "--out", s(&out), "--override", "noequals"],
        vec!["run", "--scenario", s(&scenario), "--out", s(&out), "--override", "method=warp"],
        vec!["run", "--scenario", s(&scenario), "--out", s(&out), "--override", "kind=nonsense"],
        vec!["run", "--scenario", s(&scenario), "--out", s(&out), "--override", "schema_version=9"],
        vec!["sweep", "--scenario", s(&scenario), "--out", s(&out)],
        vec!["calibrate", "--scenario", s(&scenario), "--out", s(&out)],
        vec!["run", "--bogus-flag"],
    ] {
        let o = qwalk(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.exists(), "{args:?} created outputs");
    }
}

#[test]
fn domain_error_exits_one_and_records_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = qwalk(&[
        "run",
        "--scenario",
        s(&repo("scenarios/ctqw_two_walkers.toml")),
        "--out",
        s(&out),
        "--override",
        "params.walkers=[\"U03Q2\"]",
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let m = RunManifest::load(&out).unwrap();
    assert_eq!(m.status, RunStatus::Failed);
    assert!(m.error.as_deref().unwrap().contains("U03Q2"));
    m.validate(&out).unwrap();
    let records = read_records(&out.join("results.jsonl")).unwrap();
    assert_eq!(records.last().unwrap().kind, RecordKind::Error);
}

#[test]
fn ctqw_run_writes_population_matrix_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ctqw");
    let o = qwalk(&["run", "--scenario", s(&repo("scenarios/ctqw_two_walkers.toml")), "--out", s(&out), "--seed", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = RunManifest::load(&out).unwrap();
    m.validate(&out).unwrap();
    assert_eq!((m.status, m.seed, m.kind.as_str()), (RunStatus::Succeeded, 4, "ctqw"));
    let pops = read_matrix_csv(&out.join("populations.csv")).unwrap();
    assert_eq!(pops.values.shape(), (62, 61));
    assert_eq!(pops.col_labels.first().map(String::as_str), Some("0"));
    assert_eq!(pops.col_labels.last().map(String::as_str), Some("600"));
    for t in 0..61 {
        let total: f64 = pops.values.column(t).sum();
        assert!((total - 2.0).abs() < 1e-9);
    }
    let svg = std::fs::read_to_string(out.join("final_populations.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn post_selection_retention_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("post");
    let o = qwalk(&["run", "--scenario", s(&repo("scenarios/ctqw_post_selection.toml")), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let records = read_records(&out.join("results.jsonl")).unwrap();
    let retention: Vec<f64> = records
        .iter()
        .filter_map(|r| r.payload.get("retention").and_then(|v| v.as_f64()))
        .collect();
    assert!(!retention.is_empty());
    assert!(retention.iter().all(|r| *r > 0.0 && *r < 1.0));
}

#[test]
fn later_overrides_and_seed_flag_win() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ov");
    let o = qwalk(&[
        "run",
        "--scenario",
        s(&repo("scenarios/ctqw_two_walkers.toml")),
        "--out",
        s(&out),
        "--override",
        "params.t_max_ns=50",
        "--override",
        "params.t_max_ns=20",
        "--override",
        "seed=3",
        "--seed",
        "8",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let pops = read_matrix_csv(&out.join("populations.csv")).unwrap();
    assert_eq!(pops.col_labels, vec!["0", "10", "20"]);
    assert_eq!(RunManifest::load(&out).unwrap().seed, 8);
}

#[test]
fn sweep_matches_dense_golden_files() {
    let tmp = tempfile::tempdir().unwrap();
    let dense = tmp.path().join("dense");
    let o = qwalk(&["sweep", "--scenario", s(&fixture("mz_sweep_small.toml")), "--out", s(&dense)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["fringe_grid.csv", "fringe_grid.svg"] {
        assert_eq!(
            std::fs::read(dense.join(f)).unwrap(),
            std::fs::read(fixture(&format!("golden/{f}"))).unwrap(),
            "{f} differs from the golden file"
        );
    }
    let krylov = tmp.path().join("krylov");
    let o = qwalk(&["sweep", "--scenario", s(&fixture("mz_sweep_small.toml")), "--out", s(&krylov), "--override", "method=krylov"]);
    assert!(o.status.success());
    let a = read_matrix_csv(&krylov.join("fringe_grid.csv")).unwrap().values;
    let b = read_matrix_csv(&fixture("golden/fringe_grid.csv")).unwrap().values;
    assert!((a - b).abs().max() < 1e-9);
}

#[test]
fn analyze_refits_fronts() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("fronts");
    let o = qwalk(&[
        "run",
        "--scenario",
        s(&repo("scenarios/front_velocity.toml")),
        "--out",
        s(&run),
        "--override",
        "params.signal=arrival",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = qwalk(&["analyze", "--input", s(&run)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let analysis = read_records(&run.join("analysis.jsonl")).unwrap();
    assert!(analysis.iter().any(|r| r.payload.get("velocity").is_some()));
}

#[test]
fn render_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a.svg"), tmp.path().join("b.svg"));
    let input = fixture("golden/fringe_grid.csv");
    for out in [&a, &b] {
        let o = qwalk(&["render", "--input", s(&input), "--out", s(out), "--scale", "diverging", "--title", "grid"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let o = qwalk(&["render", "--input", s(&input), "--out", s(&a), "--scale", "rainbow"]);
    assert_eq!(o.status.code(), Some(2));
}
