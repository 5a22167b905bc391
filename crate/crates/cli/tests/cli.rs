use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dpquery_cli::{ingest_csv, run_cli, ExitCode};
use dpquery_core::{DataType, Value};

fn sample() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../sample")
}

fn dpquery(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpquery")).args(args).env_remove("DPQUERY_SEED").output().unwrap()
}

fn in_process(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_cli(std::iter::once("dpquery").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn ingest_infers_types_and_ownership() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "t.csv", "uid,n,x,name\n1,3,1.5,a\n2,,NaN,b\n2,4,2,\n");
    let rel = ingest_csv(&p, "uid").unwrap();
    assert_eq!(rel.len(), 3);
    assert!(rel.is_owned());
    let types: Vec<DataType> = rel.columns().iter().map(|c| c.ty).collect();
    assert_eq!(types, [DataType::Int, DataType::Int, DataType::Float, DataType::Text]);
    assert_eq!(rel.rows()[1][1], Value::Null);
    assert!(matches!(rel.rows()[1][2], Value::Float(x) if x.is_nan()));
    assert_eq!(rel.distinct_users(), 2);
}

#[test]
fn ingest_errors() {
    let dir = tempfile::tempdir().unwrap();
    let no_uid = write(dir.path(), "a.csv", "id,x\n1,2\n");
    assert_eq!(ingest_csv(&no_uid, "uid").unwrap_err().exit_code(), ExitCode::Io);
    let ragged = write(dir.path(), "b.csv", "uid,x\n1,2\n3\n");
    assert!(ingest_csv(&ragged, "uid").is_err());
    let null_uid = write(dir.path(), "c.csv", "uid,x\n,2\n");
    assert!(ingest_csv(&null_uid, "uid").is_err());
    assert_eq!(ingest_csv(&dir.path().join("missing.csv"), "uid").unwrap_err().exit_code(), ExitCode::Io);
}

#[test]
fn run_prints_csv_with_footer_and_is_repeatable() {
    let s = sample();
    let data = s.join("data");
    let query = s.join("queries/department_count.sql");
    let args = [
        "run",
        "--data",
        data.to_str().unwrap(),
        "--query",
        query.to_str().unwrap(),
        "--epsilon",
        "1",
        "--delta",
        "1e-5",
        "--seed",
        "42",
    ];
    let a = dpquery(&args);
    let b = dpquery(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.starts_with("dept,c,c_ci_low,c_ci_high\n"), "{text}");
    assert!(text.contains("# suppressed_partitions="), "{text}");
    assert!(text.contains("delta=1e-5"), "{text}");
}

#[test]
fn seed_falls_back_to_environment() {
    let s = sample();
    let data = s.join("data");
    let query = s.join("queries/cohort_sum.sql");
    let args = [
        "run",
        "--data",
        data.to_str().unwrap(),
        "--query",
        query.to_str().unwrap(),
        "--epsilon",
        "1",
        "--delta",
        "1e-5",
    ];
    let with_env = |seed: &str| {
        Command::new(env!("CARGO_BIN_EXE_dpquery")).args(args).env("DPQUERY_SEED", seed).output().unwrap().stdout
    };
    assert_eq!(with_env("7"), with_env("7"));
    assert_ne!(with_env("7"), with_env("8"));
}

#[test]
fn json_lines_output() {
    let s = sample();
    let (code, out, err) = in_process(&[
        "run",
        "--data",
        s.join("data").to_str().unwrap(),
        "--query",
        s.join("queries/cohort_sum.sql").to_str().unwrap(),
        "--epsilon",
        "1",
        "--delta",
        "1e-5",
        "--seed",
        "1",
        "--format",
        "json",
        "--leftovers",
    ]);
    assert_eq!(code, 0, "{err}");
    let lines: Vec<serde_json::Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let summary = &lines.last().unwrap()["summary"];
    assert!(summary["leftovers"].is_boolean());
    assert_eq!(summary["cu"], 1);
    assert!(lines[0]["cohort"].is_i64());
}

#[test]
fn default_delta_follows_user_count() {
    let s = sample();
    let (code, out, err) = in_process(&[
        "run",
        "--data",
        s.join("data").to_str().unwrap(),
        "--query",
        s.join("queries/cohort_sum.sql").to_str().unwrap(),
        "--epsilon",
        "0.5",
        "--seed",
        "1",
    ]);
    assert_eq!(code, 0, "{err}");
    // 300 users in the sample tables.
    let expected = (-0.5 * 300f64.ln().powi(2)).exp();
    assert!(out.contains(&format!("delta={expected:?}")), "{out}");
}

#[test]
fn error_categories_map_to_exit_codes() {
    let s = sample();
    let data = s.join("data");
    let dir = tempfile::tempdir().unwrap();
    let run = |sql: &str, extra: &[&str]| {
        let q = write(dir.path(), "q.sql", sql);
        let mut args = vec!["run", "--data", data.to_str().unwrap(), "--query", q.to_str().unwrap(), "--epsilon", "1"];
        args.extend_from_slice(extra);
        let (code, _, err) = in_process(&args);
        (code, err)
    };
    let (code, err) = run(&std::fs::read_to_string(s.join("queries/ownership_violation.sql")).unwrap(), &[]);
    assert_eq!(code, ExitCode::Ownership as i32);
    assert!(err.contains("join"), "{err}");
    assert_eq!(run("SELECT WITH ANONYMIZATION ANON_COUNT(* FROM Employee", &[]).0, ExitCode::Parse as i32);
    assert_eq!(run("SELECT dept, COUNT(*) FROM Employee GROUP BY dept", &[]).0, ExitCode::Parse as i32);
    assert_eq!(
        run("SELECT WITH ANONYMIZATION ANON_COUNT(*) FROM Employee", &["--delta", "2"]).0,
        ExitCode::PrivacyParameter as i32
    );
    assert_eq!(
        run("SELECT WITH ANONYMIZATION ANON_COUNT(*) FROM Employee", &["--cu", "0"]).0,
        ExitCode::PrivacyParameter as i32
    );
    let (code, _, _) = in_process(&["run", "--data", "/nonexistent", "--query", "/nonexistent", "--epsilon", "1"]);
    assert_eq!(code, ExitCode::Io as i32);
    assert_eq!(in_process(&["run", "--epsilon", "1"]).0, ExitCode::Usage as i32);
    assert_eq!(in_process(&["--help"]).0, 0);
}

#[test]
fn explain_prints_both_stages() {
    let s = sample();
    let (code, out, _) = in_process(&[
        "run",
        "--data",
        s.join("data").to_str().unwrap(),
        "--query",
        s.join("queries/department_count.sql").to_str().unwrap(),
        "--epsilon",
        "1",
        "--delta",
        "1e-5",
        "--cu",
        "3",
        "--explain",
    ]);
    assert_eq!(code, 0);
    assert!(out.starts_with("U:\nreservoir per_user=3"), "{out}");
    assert!(out.contains("threshold __users >="), "{out}");
}

#[test]
fn test_dp_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("w.json");
    let quick = ["--samples", "20000", "--databases", "4", "--sizes", "1,2,3", "--seed", "3"];
    let mut args = vec!["test-dp", "anon_count"];
    args.extend(quick);
    let (code, out, _) = in_process(&args);
    assert_eq!(code, 0, "{out}");
    assert!(out.starts_with("PASS anon_count"), "{out}");

    let mut args = vec!["test-dp", "broken_avg", "--report", report.to_str().unwrap()];
    args.extend(quick);
    let (code, out, _) = in_process(&args);
    assert_eq!(code, ExitCode::DpViolation as i32, "{out}");
    assert!(out.contains(report.to_str().unwrap()), "{out}");
    let body: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(body["verdict"]["passed"], false);
    assert_eq!(body["seed"], 3);
    assert!(body["verdict"]["witness"]["d1"].is_array());

    assert_eq!(in_process(&["test-dp", "anon_mode"]).0, ExitCode::Usage as i32);
    assert_eq!(in_process(&["test-dp", "anon_count", "--samples", "10"]).0, ExitCode::PrivacyParameter as i32);
}

#[test]
fn accuracy_report_values() {
    let (code, out, err) = in_process(&[
        "accuracy",
        "--sensitivity",
        "373",
        "--epsilon",
        "0.1",
        "--delta",
        "1e-5",
        "--true-value",
        "1477000",
        "--uniform",
        "50,150,100",
    ]);
    assert_eq!(code, 0, "{err}");
    let field = |k: &str| -> f64 {
        out.lines()
            .find_map(|l| l.strip_prefix(&format!("{k}=")))
            .unwrap_or_else(|| panic!("{k} in {out}"))
            .parse()
            .unwrap()
    };
    assert!((field("median_relative_error") - 0.00175).abs() < 1e-5);
    assert_eq!(field("expected_clamp_error"), 12.5);
    assert!((field("small_count_suppression_limit") - (1.0 - 1e-5)).abs() < 1e-12);
    let (code, out, _) = in_process(&["accuracy", "--sensitivity", "1", "--epsilon", "1", "--delta", "0.05", "--json"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert!((v["suppression"]["partition_release"].as_f64().unwrap() - 0.05).abs() < 1e-12);
    assert_eq!(
        in_process(&["accuracy", "--sensitivity", "1", "--epsilon", "0", "--delta", "0.05"]).0,
        ExitCode::PrivacyParameter as i32
    );
}
