//! Fast self-checks against closed-form values.
//!
//! Each check compares a computed value with a reference and passes when the
//! absolute error is within its tolerance. The tolerance of check `name` can
//! be overridden with `AFFDIM_SELFTEST_<NAME>_TOL`; an override that is not a
//! non-negative number makes the check fail.

use std::fmt::Write as _;

use crate::cocycle;
use crate::dimension::{affinity_dimension, carpet_oracle, lyapunov_dimension};
use crate::error::Result;
use crate::estimator::{local_dimension, sample_points, EstimatorConfig};
use crate::ifs::AffineIFS;
use crate::linalg::{from_rows, Matrix};
use crate::measure::ShiftMeasure;

use super::config::ExperimentConfig;
use super::report::execute;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub value: f64,
    pub expected: f64,
    pub tol: f64,
    pub pass: bool,
    pub note: Option<String>,
}

struct Check {
    name: &'static str,
    default_tol: f64,
    run: fn() -> Result<(f64, f64)>,
}

const CHECKS: &[Check] = &[
    Check {
        name: "cantor",
        default_tol: 0.03,
        run: cantor,
    },
    Check {
        name: "square",
        default_tol: 0.05,
        run: square,
    },
    Check {
        name: "spectrum",
        default_tol: 5e-3,
        run: diagonal_spectrum,
    },
    Check {
        name: "carpet",
        default_tol: 1e-9,
        run: carpet,
    },
    Check {
        name: "lyapdim",
        default_tol: 1e-12,
        run: lyapdim,
    },
    Check {
        name: "affinity",
        default_tol: 1e-9,
        run: affinity,
    },
    Check {
        name: "determinism",
        default_tol: 0.0,
        run: determinism,
    },
];

fn cantor() -> Result<(f64, f64)> {
    let ifs = AffineIFS::from_parts(
        &[vec![vec![1.0 / 3.0]], vec![vec![1.0 / 3.0]]],
        &[vec![0.0], vec![2.0 / 3.0]],
    )?;
    let cloud = sample_points(&ifs, &ShiftMeasure::uniform(2), 100_000, 30, 11)?;
    let est = local_dimension(&cloud, &EstimatorConfig::default())?;
    Ok((est.value, 2f64.ln() / 3f64.ln()))
}

fn square() -> Result<(f64, f64)> {
    let half = vec![vec![0.5, 0.0], vec![0.0, 0.5]];
    let ifs = AffineIFS::from_parts(
        &vec![half; 4],
        &[
            vec![0.0, 0.0],
            vec![0.5, 0.0],
            vec![0.0, 0.5],
            vec![0.5, 0.5],
        ],
    )?;
    let cloud = sample_points(&ifs, &ShiftMeasure::uniform(4), 50_000, 25, 12)?;
    let est = local_dimension(&cloud, &EstimatorConfig::default())?;
    Ok((est.value, 2.0))
}

/// Largest error over both exponents of a diagonal pair.
fn diagonal_spectrum() -> Result<(f64, f64)> {
    let diag = |a: f64, b: f64| from_rows(&[vec![a, 0.0], vec![0.0, b]]);
    let mats: Vec<Matrix> = vec![diag(0.5, 0.25), diag(1.0 / 3.0, 0.2)];
    let s = cocycle::spectrum(&mats, &ShiftMeasure::uniform(2), 20_000, 4, None, 13)?;
    let exact = [-(6f64.ln()) / 2.0, -(20f64.ln()) / 2.0];
    let err = s
        .raw
        .iter()
        .zip(exact)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok((err, 0.0))
}

/// Uniform (3, 2) carpet with digits (0,0), (1,0), (2,1).
fn carpet() -> Result<(f64, f64)> {
    let o = carpet_oracle(3, 2, &[(0, 0), (1, 0), (2, 1)], None)?;
    let hq = -(2.0 / 3.0 * (2.0f64 / 3.0).ln() + 1.0 / 3.0 * (1.0f64 / 3.0).ln());
    let expected = hq / 2f64.ln() + (3f64.ln() - hq) / 3f64.ln();
    Ok((o.dim_mu.value, expected))
}

/// `h0 = 1`, exponents `(-1, -2)`: one full unit of expansion plus a half.
fn lyapdim() -> Result<(f64, f64)> {
    let spec = cocycle::LyapunovSpectrum::exact(vec![-1.0, -2.0], vec![1, 1])?;
    let a = lyapunov_dimension(0.5, &spec)?.value;
    let b = lyapunov_dimension(2.0, &spec)?.value;
    Ok(((a - 0.5).abs() + (b - 1.5).abs(), 0.0))
}

/// Three similarities of ratio 1/3 in the plane have similarity dimension 1.
fn affinity() -> Result<(f64, f64)> {
    let m = from_rows(&[vec![0.0, -1.0 / 3.0], vec![1.0 / 3.0, 0.0]]);
    let a = affinity_dimension(&[m.clone(), m.clone(), m], 6, 1e-13)?;
    Ok((a.root_at_level, 1.0))
}

/// Number of differing bytes between two runs of the same config.
fn determinism() -> Result<(f64, f64)> {
    let text = r#"{
        "seed": 5,
        "ifs": {"matrices": [[[0.5]], [[0.5]]], "translations": [[0.0], [0.5]]},
        "measure": {"kind": "bernoulli", "probs": [0.3, 0.7]},
        "task": {"kind": "estimate", "cloud": {"n_points": 5000, "depth": 30}}
    }"#;
    let config = ExperimentConfig::from_json(text)?;
    let render = || -> Result<Vec<u8>> {
        let mut report = execute(&config)?.report;
        report.wall_clock_seconds = 0.0;
        Ok(serde_json::to_vec(&report).expect("reports serialize"))
    };
    let (a, b) = (render()?, render()?);
    let diff = a.iter().zip(&b).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len());
    Ok((diff as f64, 0.0))
}

fn tolerance(name: &str, default: f64) -> std::result::Result<f64, String> {
    let var = format!("AFFDIM_SELFTEST_{}_TOL", name.to_uppercase());
    match std::env::var(&var) {
        Err(_) => Ok(default),
        Ok(raw) => match raw.trim().parse::<f64>() {
            Ok(t) if t >= 0.0 => Ok(t),
            _ => Err(format!("{var}={raw:?} is not a non-negative number")),
        },
    }
}

pub fn run_checks() -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|c| {
            let tol = tolerance(c.name, c.default_tol);
            match (tol, (c.run)()) {
                (Ok(tol), Ok((value, expected))) => CheckResult {
                    name: c.name,
                    value,
                    expected,
                    tol,
                    pass: (value - expected).abs() <= tol,
                    note: None,
                },
                (tol, outcome) => CheckResult {
                    name: c.name,
                    value: outcome.as_ref().map_or(f64::NAN, |v| v.0),
                    expected: outcome.as_ref().map_or(f64::NAN, |v| v.1),
                    tol: tol.as_ref().copied().unwrap_or(f64::NAN),
                    pass: false,
                    note: Some(match (tol, outcome) {
                        (Err(msg), _) => msg,
                        (_, Err(e)) => e.to_string(),
                        _ => unreachable!(),
                    }),
                },
            }
        })
        .collect()
}

pub fn render(results: &[CheckResult]) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<12} {:>14} {:>14} {:>10}  result",
        "check", "value", "expected", "tol"
    )
    .ok();
    for r in results {
        writeln!(
            out,
            "{:<12} {:>14.8} {:>14.8} {:>10.1e}  {}{}",
            r.name,
            r.value,
            r.expected,
            r.tol,
            if r.pass { "PASS" } else { "FAIL" },
            r.note
                .as_deref()
                .map(|n| format!(" ({n})"))
                .unwrap_or_default()
        )
        .ok();
    }
    let failed = results.iter().filter(|r| !r.pass).count();
    writeln!(
        out,
        "{} of {} checks passed",
        results.len() - failed,
        results.len()
    )
    .ok();
    out
}
