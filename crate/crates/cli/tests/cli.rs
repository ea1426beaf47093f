use std::fs;
use std::process::{Command, Output};

fn salmut(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_salmut")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn solve_prints_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = salmut(&["solve", "--mu", "4", "--out", out]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("thresholds [10, 4]"), "{text}");
    assert!(text.contains("gain 7.3252207"), "{text}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("solve.json")).unwrap()).unwrap();
    assert_eq!(json["thresholds"], serde_json::json!([10, 4]));
}

#[test]
fn scan_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = salmut(&["scan", "--mu", "2", "--out", dir.path().to_str().unwrap(), "--sequential"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("evaluated 66"));
    assert!(text.contains("argmax [9, 4]"));
    assert!(text.contains("unimodality violations 0"));
    let csv = fs::read_to_string(dir.path().join("scan.csv")).unwrap();
    assert_eq!(csv.lines().count(), 67);
}

#[test]
fn grad_check_passes() {
    let o = salmut(&["grad-check", "--samples", "5", "--seed", "1"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("max relative error"));
    let o = salmut(&["grad-check", "--samples", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn learn_writes_traces_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = salmut(&["learn", "--algorithm", "salmut", "--seeds", "0,1", "--max-iter", "2000", "--stride", "20", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for seed in [0, 1] {
        let trace = fs::read_to_string(dir.path().join(format!("trace_salmut_seed{seed}.csv"))).unwrap();
        assert_eq!(trace.lines().count(), 1 + 100);
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["max_iterations"], 2000);
    assert_eq!(summary["algorithms"].as_array().unwrap().len(), 1);
}

#[test]
fn compare_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = salmut(&["compare", "--seeds", "0,1,2", "--max-iter", "5000", "--out", out]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("mu = 4") && text.contains("mu = 2"), "{text}");
    let tables: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("comparison.json")).unwrap()).unwrap();
    assert_eq!(tables.as_array().unwrap().len(), 2);
    assert!(dir.path().join("mu4").join("summary.json").exists());
    assert!(dir.path().join("mu2").join("trace_qlearning_seed2.csv").exists());
}

#[test]
fn compare_check_fails_on_short_runs() {
    let o = salmut(&["compare", "--mu", "4", "--seeds", "0", "--max-iter", "50", "--check"]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    let o = salmut(&["compare", "--mu", "4", "--seeds", "0", "--max-iter", "50"]);
    assert!(o.status.success());
}

#[test]
fn bad_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"seeds": [1], "unknown": 3}"#).unwrap();
    let o = salmut(&["solve", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    let o = salmut(&["solve", "--config", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    fs::write(&path, r#"{"model": {"mu": -1.0}}"#).unwrap();
    let o = salmut(&["solve", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_is_used() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    fs::write(&path, r#"{"model": {"mu": 2.0}}"#).unwrap();
    let o = salmut(&["solve", "--config", path.to_str().unwrap()]);
    assert!(stdout(&o).contains("thresholds [9, 4]"));
}
