//! End-to-end runs of the `affdim` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn affdim(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_affdim"));
    cmd.args(args).env_remove("AFFDIM_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run_report(config: &Path, extra: &[&str]) -> Value {
    let out = affdim(
        &[&["--config", config.to_str().unwrap(), "--quiet"], extra].concat(),
        &[],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

const DIAGONAL_SPECTRUM: &str = r#"{
    "seed": 4,
    "ifs": {"matrices": [[[0.5, 0.0], [0.0, 0.25]], [[0.3333333333333333, 0.0], [0.0, 0.2]]], "translations": [[0, 0], [1, 1]]},
    "measure": {"kind": "uniform"},
    "task": {"kind": "spectrum", "n_steps": 100000, "n_reps": 16}
}"#;

#[test]
fn carpet_report_contains_the_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "carpet.json",
        r#"{"task": {"kind": "carpet", "n_cols": 3, "m_rows": 2, "digits": [[0, 0], [1, 0], [2, 1]]}}"#,
    );
    let report = run_report(&cfg, &[]);
    let dim = report["output"]["carpet"]["dim_mu"]["value"]
        .as_f64()
        .unwrap();
    let hq = -(2.0 / 3.0 * (2.0f64 / 3.0).ln() + 1.0 / 3.0 * (1.0f64 / 3.0).ln());
    let expected = hq / 2f64.ln() + (3f64.ln() - hq) / 3f64.ln();
    assert!((dim - expected).abs() < 1e-12, "{dim}");
    assert!((dim - 1.3391).abs() < 1e-3, "{dim}");
    assert_eq!(report["task"], "carpet");
    assert_eq!(
        report["provenance"]["inputs_digest"]
            .as_str()
            .unwrap()
            .len(),
        64
    );
    assert!(report["output"]["carpet"]["dim_mu"]["provenance"]["inputs_digest"].is_string());
}

#[test]
fn diagonal_spectrum_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "spectrum.json", DIAGONAL_SPECTRUM);
    let report = run_report(&cfg, &[]);
    let exps: Vec<f64> = report["output"]["spectrum"]["spectrum"]["exponents"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(exps.len(), 2);
    assert!(
        (exps[0] + 0.8959).abs() < 1e-3 && (exps[1] + 1.4979).abs() < 1e-3,
        "{exps:?}"
    );
}

#[test]
fn malformed_configs_exit_with_code_2_and_a_path() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (
            r#"{"ifs": {"matrices": [[[0.5]], [[0.5]]], "translations": [[0], [0.5]]},
                "measure": {"kind": "markov", "transition": [[0.5, 0.5], [0.7, 0.2]]},
                "task": {"kind": "spectrum"}}"#,
            "measure.transition[1]",
        ),
        (
            r#"{"task": {"kind": "affdim", "level": 4, "tolerance": 1e-9}}"#,
            "task.tolerance",
        ),
        (
            r#"{"task": {"kind": "sample", "cloud": {"n_points": "many"}}}"#,
            "task.cloud.n_points",
        ),
        (r#"{"sede": 1, "task": {"kind": "affdim"}}"#, "sede"),
        (r#"{"task": {"kind": "affdim"}}"#, "ifs"),
    ];
    for (i, (text, path)) in cases.iter().enumerate() {
        let cfg = write_config(dir.path(), &format!("bad{i}.json"), text);
        let out = affdim(&["--config", cfg.to_str().unwrap()], &[]);
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert_eq!(out.status.code(), Some(2), "case {i}: {stderr}");
        assert!(stderr.contains(&format!("`{path}`")), "case {i}: {stderr}");
    }
}

#[test]
fn missing_inputs_exit_with_code_2() {
    assert_eq!(affdim(&[], &[]).status.code(), Some(2));
    assert_eq!(
        affdim(&["--config", "/nonexistent/config.json"], &[])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn numeric_failures_exit_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "expanding.json",
        r#"{"ifs": {"matrices": [[[1.5]], [[1.2]]], "translations": [[0], [1]]},
            "measure": {"kind": "uniform"},
            "task": {"kind": "sample", "cloud": {"n_points": 100}}}"#,
    );
    let out = affdim(&["--config", cfg.to_str().unwrap()], &[]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn seed_override_and_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "sample.json",
        r#"{"seed": 1, "ifs": {"matrices": [[[0.5]], [[0.5]]], "translations": [[0], [0.5]]},
            "measure": {"kind": "uniform"}, "task": {"kind": "sample", "cloud": {"n_points": 1000, "depth": 40}},
            "csv": "CSV_PATH"}"#
            .replace("CSV_PATH", dir.path().join("cloud.csv").to_str().unwrap())
            .as_str(),
    );
    let report_path = dir.path().join("report.json");
    let out = affdim(
        &[
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "99",
            "--out",
            report_path.to_str().unwrap(),
            "--threads",
            "1",
        ],
        &[],
    );
    assert!(out.status.success());
    let summary = String::from_utf8_lossy(&out.stdout);
    assert!(
        summary.starts_with("sample: sampled 1000 points"),
        "{summary}"
    );
    let report: Value = serde_json::from_slice(&std::fs::read(&report_path).unwrap()).unwrap();
    assert_eq!(report["seed"], 99);
    assert_eq!(report["config"]["seed"], 99);
    let csv = std::fs::read_to_string(dir.path().join("cloud.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x0"));
    let first = lines.next().unwrap();
    let mantissa = first
        .split('e')
        .next()
        .unwrap()
        .trim_start_matches('-')
        .replace('.', "");
    assert_eq!(mantissa.len(), 17, "{first}");
    assert_eq!(csv.lines().count(), 1001);
}

#[test]
fn threads_fall_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "affdim.json",
        r#"{"ifs": {"matrices": [[[0.5]], [[0.25]]], "translations": [[0], [1]]}, "task": {"kind": "affdim", "level": 6}}"#,
    );
    let out = affdim(
        &["--config", cfg.to_str().unwrap(), "--quiet"],
        &[("AFFDIM_THREADS", "1")],
    );
    assert!(out.status.success());
    let out = affdim(
        &["--config", cfg.to_str().unwrap()],
        &[("AFFDIM_THREADS", "lots")],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn selftest_passes_and_is_deterministic() {
    let a = affdim(&["selftest"], &[]);
    let b = affdim(&["selftest"], &[]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stdout));
    assert_eq!(a.stdout, b.stdout);
    assert!(String::from_utf8_lossy(&a.stdout).contains("7 of 7 checks passed"));
}

#[test]
fn corrupted_tolerance_fails_the_selftest() {
    for value in ["0", "not-a-number", "-1"] {
        let out = affdim(&["selftest"], &[("AFFDIM_SELFTEST_CANTOR_TOL", value)]);
        assert_eq!(out.status.code(), Some(1), "{value}");
        let table = String::from_utf8_lossy(&out.stdout);
        let row = table.lines().find(|l| l.starts_with("cantor")).unwrap();
        assert!(row.contains("FAIL"), "{row}");
        assert!(
            table.lines().filter(|l| l.contains("PASS")).count() == 6,
            "{table}"
        );
    }
}
