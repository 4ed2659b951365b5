//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{ConservationConfig, EstimatorConfig, SuiteConfig, SweepConfig};
use crate::ifs::AffineIFS;
use crate::linalg::{from_rows, Matrix};
use crate::measure::ShiftMeasure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Report path; the report goes to standard output when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Path for tabular output (point clouds, sweeps, curves, suites).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ifs: Option<IfsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<MeasureSpec>,
    pub task: TaskSpec,
}

/// Row-major matrices and their translations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IfsSpec {
    pub matrices: Vec<Vec<Vec<f64>>>,
    pub translations: Vec<Vec<f64>>,
}

impl IfsSpec {
    pub fn build(&self) -> Result<AffineIFS> {
        AffineIFS::from_parts(&self.matrices, &self.translations).map_err(|e| e.prefixed("ifs"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    Uniform,
    Bernoulli { probs: Vec<f64> },
    Markov { transition: Vec<Vec<f64>> },
}

impl MeasureSpec {
    pub fn build(&self, alphabet: usize) -> Result<ShiftMeasure> {
        let mu = match self {
            MeasureSpec::Uniform => Ok(ShiftMeasure::uniform(alphabet)),
            MeasureSpec::Bernoulli { probs } => ShiftMeasure::bernoulli(probs.clone()),
            MeasureSpec::Markov { transition } => ShiftMeasure::markov(transition.clone()),
        }
        .map_err(|e| e.prefixed("measure"))?;
        if mu.alphabet_size() != alphabet {
            return Err(Error::invalid(
                "measure",
                format!("{} symbols for {alphabet} maps", mu.alphabet_size()),
            ));
        }
        Ok(mu)
    }
}

/// How to draw a point cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CloudSpec {
    pub n_points: usize,
    /// Truncation depth; chosen from `tail_tol` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    /// Truncation error relative to the attractor scale.
    pub tail_tol: f64,
}

impl Default for CloudSpec {
    fn default() -> Self {
        CloudSpec {
            n_points: 100_000,
            depth: None,
            tail_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumTask {
    pub n_steps: usize,
    pub n_reps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap_tol: Option<f64>,
}

impl Default for SpectrumTask {
    fn default() -> Self {
        SpectrumTask {
            n_steps: 100_000,
            n_reps: 16,
            gap_tol: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlagTask {
    /// Chronological past `x_{-n} .. x_{-1}`; sampled from the measure when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub past: Option<Vec<usize>>,
    pub past_depth: usize,
    pub spectrum: SpectrumTask,
    /// Number of independent pasts for angle statistics (0 skips them).
    pub angle_samples: usize,
}

impl Default for FlagTask {
    fn default() -> Self {
        FlagTask {
            past: None,
            past_depth: 200,
            spectrum: SpectrumTask {
                n_steps: 20_000,
                n_reps: 8,
                gap_tol: None,
            },
            angle_samples: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapdimTask {
    /// Entropy; the measure's entropy when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h0: Option<f64>,
    /// Full sequence `h_0 .. h_s`, enabling the Ledrappier-Young sum and the
    /// sharpness check.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropies: Option<Vec<f64>>,
    /// Exact spectrum; estimated from the IFS and measure when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exponents: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multiplicities: Option<Vec<usize>>,
    pub spectrum: SpectrumTask,
}

impl Default for LyapdimTask {
    fn default() -> Self {
        LyapdimTask {
            h0: None,
            entropies: None,
            exponents: None,
            multiplicities: None,
            spectrum: SpectrumTask {
                n_steps: 20_000,
                n_reps: 8,
                gap_tol: None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AffdimTask {
    pub level: usize,
    pub tol: f64,
}

impl Default for AffdimTask {
    fn default() -> Self {
        AffdimTask {
            level: 10,
            tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleTask {
    pub cloud: CloudSpec,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateTask {
    pub cloud: CloudSpec,
    pub estimator: EstimatorConfig,
    /// Also estimate each quarter of the cloud separately.
    pub quarters: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarpetTask {
    pub n_cols: usize,
    pub m_rows: usize,
    /// `[column, row]` pairs.
    pub digits: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
    /// Sample the carpet measure and check the closed forms empirically.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub empirical: Option<CarpetEmpirical>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarpetEmpirical {
    pub cloud: CloudSpec,
    pub conservation: ConservationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepTask {
    /// One entry per grid point: a translation vector for every map. The
    /// IFS translations are ignored.
    pub grid: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConserveTask {
    #[serde(default)]
    pub cloud: CloudSpec,
    /// Columns of an orthonormal basis of `W`.
    pub subspace: Vec<Vec<f64>>,
    #[serde(default)]
    pub conservation: ConservationConfig,
}

impl ConserveTask {
    pub fn basis(&self, d: usize) -> Result<Matrix> {
        if self.subspace.is_empty() {
            return Err(Error::invalid(
                "task.subspace",
                "at least one basis vector is required",
            ));
        }
        if let Some(i) = self.subspace.iter().position(|c| c.len() != d) {
            return Err(Error::invalid(
                format!("task.subspace[{i}]"),
                format!("expected {d} coordinates"),
            ));
        }
        Ok(from_rows(&self.subspace).transpose())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub label: String,
    pub ifs: IfsSpec,
    pub measure: MeasureSpec,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteTask {
    pub families: Vec<FamilySpec>,
    /// Number of random planar pairs appended to `families`.
    pub random_planar: usize,
    pub suite: SuiteConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    Spectrum(SpectrumTask),
    Flag(FlagTask),
    Lyapdim(LyapdimTask),
    Affdim(AffdimTask),
    Sample(SampleTask),
    Estimate(EstimateTask),
    Carpet(CarpetTask),
    Sweep(SweepTask),
    Conserve(ConserveTask),
    Suite(SuiteTask),
}

impl TaskSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TaskSpec::Spectrum(_) => "spectrum",
            TaskSpec::Flag(_) => "flag",
            TaskSpec::Lyapdim(_) => "lyapdim",
            TaskSpec::Affdim(_) => "affdim",
            TaskSpec::Sample(_) => "sample",
            TaskSpec::Estimate(_) => "estimate",
            TaskSpec::Carpet(_) => "carpet",
            TaskSpec::Sweep(_) => "sweep",
            TaskSpec::Conserve(_) => "conserve",
            TaskSpec::Suite(_) => "suite",
        }
    }
}

fn path_error<E: std::fmt::Display>(e: serde_path_to_error::Error<E>, prefix: &str) -> Error {
    let path = e.path().to_string();
    let err = Error::invalid(
        if path == "." { String::new() } else { path },
        e.into_inner().to_string(),
    );
    if prefix.is_empty() {
        err
    } else {
        err.prefixed(prefix)
    }
}

fn variant_error<T: serde::de::DeserializeOwned>(body: serde_json::Value) -> Option<Error> {
    serde_path_to_error::deserialize::<_, T>(body)
        .err()
        .map(|e| path_error(e, "task"))
}

/// Tagged enums buffer their content, which hides the location of an error
/// inside the task body. Re-parse the body as the named variant to recover it.
fn task_error(value: &serde_json::Value) -> Option<Error> {
    let mut body = value.get("task")?.as_object()?.clone();
    let kind = body.remove("kind")?;
    let body = serde_json::Value::Object(body);
    match kind.as_str()? {
        "spectrum" => variant_error::<SpectrumTask>(body),
        "flag" => variant_error::<FlagTask>(body),
        "lyapdim" => variant_error::<LyapdimTask>(body),
        "affdim" => variant_error::<AffdimTask>(body),
        "sample" => variant_error::<SampleTask>(body),
        "estimate" => variant_error::<EstimateTask>(body),
        "carpet" => variant_error::<CarpetTask>(body),
        "sweep" => variant_error::<SweepTask>(body),
        "conserve" => variant_error::<ConserveTask>(body),
        "suite" => variant_error::<SuiteTask>(body),
        _ => None,
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let coarse = path_error(e, "");
            match &coarse {
                Error::Invalid { path, .. } if path == "task" => serde_json::from_str(text)
                    .ok()
                    .and_then(|v| task_error(&v))
                    .unwrap_or(coarse),
                _ => coarse,
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::invalid("config", format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    pub fn ifs(&self) -> Result<AffineIFS> {
        self.ifs
            .as_ref()
            .ok_or_else(|| {
                Error::invalid("ifs", format!("the {} task needs an IFS", self.task.name()))
            })?
            .build()
    }

    pub fn measure(&self, alphabet: usize) -> Result<ShiftMeasure> {
        self.measure
            .as_ref()
            .ok_or_else(|| {
                Error::invalid(
                    "measure",
                    format!("the {} task needs a measure", self.task.name()),
                )
            })?
            .build(alphabet)
    }

    pub fn matrices(&self) -> Result<Vec<Matrix>> {
        Ok(self.ifs()?.matrices())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_json(
            r#"{"seed": 3, "ifs": {"matrices": [[[0.5]], [[0.5]]], "translations": [[0.0], [0.5]]},
                "measure": {"kind": "uniform"}, "task": {"kind": "spectrum", "n_steps": 2000}}"#,
        )
        .unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(
            c.task,
            TaskSpec::Spectrum(SpectrumTask {
                n_steps: 2000,
                ..Default::default()
            })
        );
        assert_eq!(c.measure(2).unwrap(), ShiftMeasure::uniform(2));
    }

    #[test]
    fn unknown_keys_carry_their_path() {
        let e =
            ExperimentConfig::from_json(r#"{"task": {"kind": "affdim", "levle": 3}}"#).unwrap_err();
        match e {
            Error::Invalid { path, msg } => {
                assert_eq!(path, "task.levle");
                assert!(msg.contains("levle"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
        let e = ExperimentConfig::from_json(
            r#"{"task": {"kind": "sample", "cloud": {"n_points": -1}}}"#,
        )
        .unwrap_err();
        assert!(
            matches!(e, Error::Invalid { ref path, .. } if path == "task.cloud.n_points"),
            "{e:?}"
        );
    }

    #[test]
    fn bad_markov_row_is_located() {
        let c = ExperimentConfig::from_json(
            r#"{"measure": {"kind": "markov", "transition": [[0.5, 0.5], [0.6, 0.3]]}, "task": {"kind": "affdim"}}"#,
        )
        .unwrap();
        let e = c.measure(2).unwrap_err();
        assert!(
            matches!(e, Error::Invalid { ref path, .. } if path == "measure.transition[1]"),
            "{e:?}"
        );
    }

    #[test]
    fn round_trips() {
        let c = ExperimentConfig::from_json(
            r#"{"task": {"kind": "carpet", "n_cols": 3, "m_rows": 2, "digits": [[0, 0], [1, 0], [2, 1]], "empirical": {}}}"#,
        )
        .unwrap();
        let back = ExperimentConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(c, back);
    }
}
