use std::path::Path;
use std::process::{Command, Output};

use khmaladze::family::Exponential;
use khmaladze::gof::{draw_sample, NullTable, TestReport};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_khmaladze"));
    c.env_remove("GOF_CACHE_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn fixture(dir: &Path, values: &[f64]) -> String {
    let path = dir.join("data.csv");
    let text: String = values.iter().map(|v| format!("{v}\n")).collect();
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn exp_data(dir: &Path) -> String {
    fixture(dir, &draw_sample(&Exponential::fixed(1.5), &[], 600, 11, 0))
}

#[test]
fn test_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = exp_data(dir.path());
    let out = dir.path().join("r.json");
    let o = run(&[
        "test",
        "--data",
        &data,
        "--cells",
        "10",
        "--reps",
        "1000",
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: TestReport = serde_json::from_slice(&std::fs::read(out).unwrap()).unwrap();
    assert_eq!(report.n, 600);
    assert_eq!(report.cells, 10);
    assert!(report.p_value > 0.0 && report.p_value <= 1.0);
    assert_eq!(report.theta_hat.as_ref().map(|t| t.len()), Some(1));
}

#[test]
fn missing_data_flag_is_a_usage_error() {
    let o = run(&["test", "--cells", "10"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--data"));
}

#[test]
fn validation_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = exp_data(dir.path());
    assert_eq!(run(&["test", "--data", &data, "--cells", "1"]).status.code(), Some(1));
    assert_eq!(run(&["test", "--data", &data, "--cells", "5", "--reps", "10"]).status.code(), Some(1));
    let t = dir.path().join("t.txt");
    assert_eq!(run(&["table", "--cells", "5", "--out", t.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(run(&["verify", "--unknown"]).status.code(), Some(1));
}

#[test]
fn unreadable_input_exits_two() {
    let o = run(&["test", "--data", "/nonexistent/d.csv", "--cells", "5"]);
    assert_eq!(o.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let data = exp_data(dir.path());
    let o = run(&["test", "--data", &data, "--cells", "5", "--reps", "1000", "--out", "/nonexistent/dir/r.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn statistical_errors_exit_three_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path(), &[0.5, -1.0, 2.0]);
    let o = run(&["test", "--data", &data, "--cells", "4", "--reps", "1000"]);
    assert_eq!(o.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(err["error"], "OutOfSupport");
    assert!(err["message"].as_str().unwrap().contains("-1"));

    // every observation in the first cell: the estimate runs to the boundary
    let data = fixture(dir.path(), &[0.001; 50]);
    let o = run(&["test", "--data", &data, "--edges", "0,1,2,3", "--reps", "1000"]);
    assert_eq!(o.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(err["error"], "MleNotFound");
}

#[test]
fn rejection_still_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    // uniform data against an exponential family
    let values: Vec<f64> = (0..2000).map(|i| (i as f64 + 0.5) / 2000.0).collect();
    let data = fixture(dir.path(), &values);
    let o = run(&["test", "--data", &data, "--cells", "10", "--reps", "1000"]);
    assert_eq!(o.status.code(), Some(0));
    let report: TestReport = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report.p_value < 0.05);
    let reject = report.diagnostics.iter().find(|d| d.name == "reject_at_alpha").unwrap();
    assert!(!reject.passed);
}

#[test]
fn table_is_readable_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    for p in [&a, &b] {
        let o = run(&[
            "table",
            "--cells",
            "8",
            "--statistic",
            "cvm",
            "--reps",
            "1500",
            "--seed",
            "9",
            "--out",
            p.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let t = NullTable::load(&a).unwrap();
    assert_eq!(t.reps() + t.failures, 1500);
    assert_eq!(t.seed, 9);
}

#[test]
fn cache_directory_is_used() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let data = exp_data(dir.path());
    let args = ["test", "--data", &data, "--cells", "6", "--reps", "1000", "--seed", "4"];
    let first = bin().args(args).env("GOF_CACHE_DIR", &cache).output().unwrap();
    assert_eq!(first.status.code(), Some(0));
    let files: Vec<_> = std::fs::read_dir(&cache).unwrap().collect();
    assert_eq!(files.len(), 1);
    let second = bin().args(args).env("GOF_CACHE_DIR", &cache).output().unwrap();
    let uncached = run(&args);
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(first.stdout, uncached.stdout);
}

#[test]
fn simulate_writes_path_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("paths.csv");
    let o = run(&["simulate", "--cells", "5", "--reps", "3", "--seed", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let mut rdr = csv::Reader::from_path(&out).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["cell_index", "time", "path_value", "replicate"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 15);
    // the projected path is tied down at the end
    let last: f64 = rows[4][2].parse().unwrap();
    assert!(last.abs() < 1e-12);

    let o = run(&[
        "simulate",
        "--process",
        "kt1",
        "--n",
        "500",
        "--cells",
        "10",
        "--reps",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let rows = csv::Reader::from_path(&out).unwrap().records().count();
    assert!(rows >= 2 && rows.is_multiple_of(2));
    assert_eq!(
        run(&["simulate", "--process", "kt1", "--cells", "10", "--out", out.to_str().unwrap()]).status.code(),
        Some(1)
    );
}

#[test]
fn verify_passes_on_a_clean_build() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("summary.json");
    let o = run(&["verify", "--seed", "3", "--out", out.to_str().unwrap()]);
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(summary["passed"], true);
    let names: Vec<&str> = summary["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    for prefix in ["discretization.", "operators.", "scores.", "processes.", "kt1.", "multidim.", "gof.", "cli."] {
        assert!(names.iter().any(|n| n.starts_with(prefix)), "no {prefix} checks");
    }
}
