//! Runs the `bayes-mi` binary end to end.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bayes_mi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bayes-mi"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json_stdout(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn estimate_apportions_missing_feature_counts() {
    let dir = tempfile::tempdir().unwrap();
    let table = write(dir.path(), "t.json", r#"{"joint": [[3, 1], [1, 3]], "feature_missing": [2, 1]}"#);
    let v = json_stdout(&bayes_mi(&["estimate", &table]));
    let want = [[9.0 / 22.0, 3.0 / 22.0], [5.0 / 44.0, 15.0 / 44.0]];
    for (i, row) in want.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            assert!((v["mode"][i][j].as_f64().unwrap() - p).abs() < 1e-14);
        }
    }
    let cov = v["covariance"].as_array().unwrap();
    assert_eq!(cov.len(), 4);
    for row in cov {
        let sum: f64 = row.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        assert!(sum.abs() < 1e-12);
    }
}

#[test]
fn mi_reports_interval_and_nested_decisions() {
    let dir = tempfile::tempdir().unwrap();
    let table = write(dir.path(), "t.json", r#"{"joint": [[40, 10], [10, 40]], "class_missing": [3, 2]}"#);
    let v = json_stdout(&bayes_mi(&["mi", &table, "--level", "0.9"]));
    let mean = v["summary"]["mean"].as_f64().unwrap();
    let (lo, hi) = (v["interval"]["lower"].as_f64().unwrap(), v["interval"]["upper"].as_f64().unwrap());
    assert!(lo < mean && mean < hi);
    // only class values are missing, so the closed form applies to the transposed table
    assert_eq!(v["summary"]["path"], "missing-features-only");
    for kind in ["F", "FF", "BF"] {
        assert_eq!(v["decisions"][kind]["include"], true);
    }
}

#[test]
fn table_can_come_from_stdin() {
    use std::io::Write;
    let mut child = Command::new(env!("CARGO_BIN_EXE_bayes-mi"))
        .args(["mi", "-"])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(br#"{"joint": [[5, 5], [5, 5]]}"#).unwrap();
    let v = json_stdout(&child.wait_with_output().unwrap());
    assert!(v["summary"]["mean"].as_f64().unwrap().abs() < 1e-12);
    assert_eq!(v["decisions"]["F"]["include"], false);
}

#[test]
fn bad_input_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let ragged = write(dir.path(), "r.json", r#"{"joint": [[1, 2], [3]]}"#);
    let malformed = write(dir.path(), "m.json", "{joint");
    let missing = dir.path().join("absent.json");
    for args in [
        vec!["estimate", ragged.as_str()],
        vec!["mi", malformed.as_str()],
        vec!["estimate", missing.to_str().unwrap()],
        vec!["mi", ragged.as_str(), "--pbar", "1.5"],
        vec!["no-such-command"],
    ] {
        let out = bayes_mi(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(bayes_mi(&["--help"]).status.code(), Some(0));
}

const SMALL_DATA: &str = "\
a,1.0,x,yes
a,2.5,x,yes
b,?,y,no
a,0.5,x,yes
b,3.5,y,no
?,4.0,y,no
a,1.5,x,yes
b,5.0,?,no
a,2.0,x,yes
b,4.5,y,no
";

#[test]
fn filter_rank_orders_features() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.data", SMALL_DATA);
    let v = json_stdout(&bayes_mi(&["filter-rank", &data, "--bins", "2", "--filter", "F"]));
    assert_eq!(v["instances"], 10);
    let features = v["features"].as_array().unwrap();
    assert_eq!(features.len(), 3);
    let means: Vec<f64> = features.iter().map(|f| f["mean"].as_f64().unwrap()).collect();
    assert!(means.windows(2).all(|w| w[0] >= w[1]), "{means:?}");
}

#[test]
fn prequential_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.data", SMALL_DATA);
    let out = dir.path().join("report");
    let args = ["prequential", &data, "--filter", "F", "--filter", "BF", "--seed", "3", "--out-dir", out.to_str().unwrap()];
    let v = json_stdout(&bayes_mi(&args));
    assert_eq!(v["runs"].as_array().unwrap().len(), 2);
    for name in ["curve_00_F.csv", "curve_01_BF.csv", "features.csv", "significance.csv", "significance_ranges.csv", "summary.json"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let curve = fs::read_to_string(out.join("curve_00_F.csv")).unwrap();
    assert_eq!(curve.lines().count(), 11);
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["format"], "bayes-mi-report/1");
    assert_eq!(summary["pairs"].as_array().unwrap().len(), 1);
}

#[test]
fn oracle_check_reports_every_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = bayes_mi(&["oracle-check", "--draws", "20000", "--resolution", "40", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(matches!(out.status.code(), Some(0 | 2)));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let checks = v["checks"].as_array().unwrap();
    assert!(!checks.is_empty());
    assert_eq!(v["pass"], checks.iter().all(|c| c["pass"] == true));
    assert_eq!(out.status.code() == Some(0), v["pass"] == true);
    assert!(dir.path().join("oracle_check.json").exists());
}
