//! Task dispatch and the report written for each run.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{CloudSpec, ExperimentConfig, SpectrumTask, TaskSpec};
use crate::cocycle::{self, AngleReport, LyapunovSpectrum};
use crate::dimension::{
    affinity_dimension, carpet_oracle, ly_formula, lyapunov_dimension, sharpness_check,
    AffinityDimension, DimValue, EntropySequence, EntropySource, Sharpness,
};
use crate::error::Result;
use crate::estimator::{
    choose_depth, conservation_check, exact_dimensionality_proxy, local_dimension,
    random_planar_families, sample_points, scaling_curve, translation_sweep, upper_bound_suite,
    BoundRow, CloudProvenance, ConservationReport, DimEstimate, Family, Method, PointCloud,
    QuarterReport, ScalingCurve, SweepReport,
};
use crate::ifs::AffineIFS;
use crate::linalg::{from_rows, Matrix};
use crate::measure::ShiftMeasure;
use crate::provenance::Provenance;
use crate::rng::derive_seed;
use crate::sentinel;
use crate::word::Word;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub task: String,
    pub seed: u64,
    /// The configuration as executed, after command-line overrides.
    pub config: ExperimentConfig,
    pub provenance: Provenance,
    pub output: TaskOutput,
    /// Excluded from reproducibility comparisons.
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum TaskOutput {
    Spectrum(SpectrumOutput),
    Flag(FlagOutput),
    Lyapdim(LyapdimOutput),
    Affdim(AffinityDimension),
    Sample(SampleOutput),
    Estimate(EstimateOutput),
    Carpet(Box<CarpetOutput>),
    Sweep(SweepReport),
    Conserve(ConserveOutput),
    Suite(SuiteOutput),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumOutput {
    pub spectrum: LyapunovSpectrum,
    pub top_exponent: f64,
    pub top_exponent_stderr: f64,
    /// Sum of exponents with multiplicity.
    #[serde(with = "sentinel::scalar")]
    pub exponent_sum: f64,
    #[serde(with = "sentinel::scalar")]
    pub log_det_average: f64,
    pub log_det_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagOutput {
    pub spectrum: LyapunovSpectrum,
    pub past: Word,
    /// `bases[i-1]` lists the orthonormal columns spanning `V^i`.
    pub bases: Vec<Vec<Vec<f64>>>,
    pub low_confidence: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub angles: Option<AngleReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapdimOutput {
    pub h0: f64,
    pub spectrum: LyapunovSpectrum,
    pub dim_ly: DimValue,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ly_formula: Option<DimValue>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sharpness: Option<Sharpness>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutput {
    pub cloud: CloudProvenance,
    pub dim: usize,
    #[serde(with = "sentinel::scalar")]
    pub tail_bound: f64,
    pub diameter: f64,
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateOutput {
    pub sample: SampleOutput,
    pub estimate: DimEstimate,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub curve: Option<ScalingCurve>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub quarters: Option<QuarterReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarpetOutput {
    pub row_marginal: Vec<f64>,
    pub entropies: EntropySequence,
    pub spectrum: LyapunovSpectrum,
    pub dim_mu: DimValue,
    pub dim_k: DimValue,
    pub dim_ly: DimValue,
    pub sharpness: Sharpness,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub empirical: Option<CarpetCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarpetCheck {
    pub sample: SampleOutput,
    /// Conservation along the strong (column) axis.
    pub conservation: ConservationReport,
    /// Predicted projection and slice dimensions.
    pub predicted_proj: f64,
    pub predicted_slice: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConserveOutput {
    pub sample: SampleOutput,
    pub report: ConservationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOutput {
    pub rows: Vec<BoundRow>,
    pub failures: usize,
}

/// Tabular output, written as CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Result of executing a configuration: the report plus optional CSV table.
pub struct Outcome {
    pub report: Report,
    pub table: Option<Table>,
    pub summary: String,
}

fn sample_summary(cloud: &PointCloud) -> SampleOutput {
    SampleOutput {
        cloud: cloud.provenance().clone(),
        dim: cloud.dim(),
        tail_bound: cloud.tail_bound(),
        diameter: cloud.diameter(),
        mean: cloud.mean(),
    }
}

fn draw(ifs: &AffineIFS, mu: &ShiftMeasure, spec: &CloudSpec, seed: u64) -> Result<PointCloud> {
    let depth = match spec.depth {
        Some(d) => d,
        None => choose_depth(ifs, mu, spec.tail_tol, seed).map_err(|e| e.prefixed("task.cloud"))?,
    };
    sample_points(ifs, mu, spec.n_points, depth, seed).map_err(|e| e.prefixed("task.cloud"))
}

fn cloud_table(cloud: &PointCloud) -> Table {
    let header = (0..cloud.dim()).map(|i| format!("x{i}")).collect();
    let rows = cloud
        .points()
        .chunks(cloud.dim())
        .map(|p| p.iter().map(|&x| sentinel::format(x)).collect())
        .collect();
    Table { header, rows }
}

fn columns(m: &Matrix) -> Vec<Vec<f64>> {
    m.column_iter()
        .map(|c| c.iter().copied().collect())
        .collect()
}

fn estimated_spectrum(
    mats: &[Matrix],
    mu: &ShiftMeasure,
    t: &SpectrumTask,
    seed: u64,
) -> Result<LyapunovSpectrum> {
    cocycle::spectrum(mats, mu, t.n_steps, t.n_reps, t.gap_tol, seed)
        .map_err(|e| e.prefixed("task"))
}

const TAG_TOP: u64 = 1;
const TAG_DET: u64 = 2;
const TAG_PAST: u64 = 3;
const TAG_ANGLES: u64 = 4;
const TAG_CLOUD: u64 = 5;
const TAG_ESTIMATE: u64 = 6;
const TAG_SLICE: u64 = 7;
const TAG_SWEEP: u64 = 8;

/// Copy of `config` with every nested seed derived from the top-level one.
pub fn effective(config: &ExperimentConfig) -> ExperimentConfig {
    let mut c = config.clone();
    let seed = c.seed;
    match &mut c.task {
        TaskSpec::Estimate(t) => t.estimator.seed = derive_seed(seed, TAG_ESTIMATE),
        TaskSpec::Carpet(t) => {
            if let Some(e) = &mut t.empirical {
                e.conservation.estimator.seed = derive_seed(seed, TAG_ESTIMATE);
                e.conservation.slice.estimator.seed = derive_seed(seed, TAG_SLICE);
            }
        }
        TaskSpec::Conserve(t) => {
            t.conservation.estimator.seed = derive_seed(seed, TAG_ESTIMATE);
            t.conservation.slice.estimator.seed = derive_seed(seed, TAG_SLICE);
        }
        TaskSpec::Sweep(t) => t.sweep.seed = derive_seed(seed, TAG_SWEEP),
        TaskSpec::Suite(t) => t.suite.seed = derive_seed(seed, TAG_SWEEP),
        _ => {}
    }
    c
}

/// Execute the task described by `config`.
pub fn execute(config: &ExperimentConfig) -> Result<Outcome> {
    let start = Instant::now();
    let config = &effective(config);
    let seed = config.seed;
    let mut summary = String::new();
    let mut table = None;
    let output = match &config.task {
        TaskSpec::Spectrum(t) => {
            let ifs = config.ifs()?;
            let mu = config.measure(ifs.len())?;
            let mats = ifs.matrices();
            let spectrum = estimated_spectrum(&mats, &mu, t, seed)?;
            let (top, top_se) =
                cocycle::top_exponent(&mats, &mu, t.n_steps, t.n_reps, derive_seed(seed, TAG_TOP))?;
            let (det, det_se) = cocycle::log_det_average(
                &mats,
                &mu,
                t.n_steps,
                t.n_reps,
                derive_seed(seed, TAG_DET),
            )?;
            let sum: f64 = spectrum.raw.iter().sum();
            for (i, (l, k)) in spectrum
                .exponents
                .iter()
                .zip(&spectrum.multiplicities)
                .enumerate()
            {
                writeln!(
                    summary,
                    "lambda_{} = {} (multiplicity {k})",
                    i + 1,
                    sentinel::format(*l)
                )
                .ok();
            }
            writeln!(
                summary,
                "exponent sum = {}, log-det average = {}",
                sentinel::format(sum),
                sentinel::format(det)
            )
            .ok();
            table = Some(Table {
                header: vec![
                    "index".into(),
                    "exponent".into(),
                    "multiplicity".into(),
                    "stderr".into(),
                ],
                rows: spectrum
                    .exponents
                    .iter()
                    .zip(&spectrum.multiplicities)
                    .zip(&spectrum.stderr)
                    .enumerate()
                    .map(|(i, ((l, k), se))| {
                        vec![
                            (i + 1).to_string(),
                            sentinel::format(*l),
                            k.to_string(),
                            sentinel::format(*se),
                        ]
                    })
                    .collect(),
            });
            TaskOutput::Spectrum(SpectrumOutput {
                spectrum,
                top_exponent: top,
                top_exponent_stderr: top_se,
                exponent_sum: sum,
                log_det_average: det,
                log_det_stderr: det_se,
            })
        }
        TaskSpec::Flag(t) => {
            let ifs = config.ifs()?;
            let mu = config.measure(ifs.len())?;
            let mats = ifs.matrices();
            let spectrum = estimated_spectrum(&mats, &mu, &t.spectrum, seed)?;
            let past = match &t.past {
                Some(p) => Word::new(p.clone()),
                None => mu.sample_word(
                    t.past_depth,
                    &mut crate::rng::stream(derive_seed(seed, TAG_PAST), 0),
                )?,
            };
            let flag = cocycle::oseledets_flag(&mats, &past, &spectrum)
                .map_err(|e| e.prefixed("task.past"))?;
            let angles = if t.angle_samples > 0 && spectrum.len() >= 2 {
                Some(cocycle::angle_stats(
                    &mats,
                    &mu,
                    &spectrum,
                    t.angle_samples,
                    t.past_depth,
                    derive_seed(seed, TAG_ANGLES),
                )?)
            } else {
                None
            };
            writeln!(
                summary,
                "flag with {} subspaces from a past of length {}",
                flag.bases.len(),
                flag.depth
            )
            .ok();
            if let Some(a) = &angles {
                writeln!(
                    summary,
                    "angle sine: min {:.6}, median {:.6}",
                    a.min, a.median
                )
                .ok();
            }
            TaskOutput::Flag(FlagOutput {
                spectrum,
                past,
                bases: flag.bases.iter().map(columns).collect(),
                low_confidence: flag.low_confidence,
                angles,
            })
        }
        TaskSpec::Lyapdim(t) => {
            let needs_system = t.exponents.is_none() || (t.h0.is_none() && t.entropies.is_none());
            let system = if needs_system {
                let ifs = config.ifs()?;
                let mu = config.measure(ifs.len())?;
                Some((ifs, mu))
            } else {
                None
            };
            let spectrum = match (&t.exponents, &system) {
                (Some(e), _) => {
                    let k = t.multiplicities.clone().unwrap_or_else(|| vec![1; e.len()]);
                    LyapunovSpectrum::exact(e.clone(), k).map_err(|e| e.prefixed("task"))?
                }
                (None, Some((ifs, mu))) => {
                    estimated_spectrum(&ifs.matrices(), mu, &t.spectrum, seed)?
                }
                (None, None) => unreachable!("system is built whenever exponents are missing"),
            };
            let entropies = match &t.entropies {
                Some(h) => Some(
                    EntropySequence::new(h.clone(), EntropySource::UserSupplied)
                        .map_err(|e| e.prefixed("task.entropies"))?,
                ),
                None => None,
            };
            let h0 = match (t.h0, &entropies, &system) {
                (Some(h), _, _) => h,
                (None, Some(h), _) => h.h0(),
                (None, None, Some((_, mu))) => mu.entropy(),
                (None, None, None) => unreachable!("system is built whenever entropy is missing"),
            };
            let dim_ly = lyapunov_dimension(h0, &spectrum).map_err(|e| e.prefixed("task"))?;
            let (ly, sharp) = match &entropies {
                Some(h) => (
                    Some(ly_formula(h, &spectrum)?),
                    Some(sharpness_check(h, &spectrum)?),
                ),
                None => (None, None),
            };
            writeln!(
                summary,
                "dim_LY = {:.6} (capped {:.6})",
                dim_ly.value, dim_ly.capped
            )
            .ok();
            if let Some(v) = &ly {
                writeln!(summary, "Ledrappier-Young sum = {:.6}", v.value).ok();
            }
            TaskOutput::Lyapdim(LyapdimOutput {
                h0,
                spectrum,
                dim_ly,
                ly_formula: ly,
                sharpness: sharp,
            })
        }
        TaskSpec::Affdim(t) => {
            let mats = config.matrices()?;
            let a = affinity_dimension(&mats, t.level, t.tol).map_err(|e| e.prefixed("task"))?;
            writeln!(
                summary,
                "affinity dimension s*_{} = {:.10} (s*_{} = {:.10})",
                a.level, a.root_at_level, a.half_level, a.root_at_half_level
            )
            .ok();
            TaskOutput::Affdim(a)
        }
        TaskSpec::Sample(t) => {
            let ifs = config.ifs()?;
            let mu = config.measure(ifs.len())?;
            let cloud = draw(&ifs, &mu, &t.cloud, derive_seed(seed, TAG_CLOUD))?;
            writeln!(
                summary,
                "sampled {} points in dimension {} at depth {}",
                cloud.len(),
                cloud.dim(),
                cloud.provenance().depth
            )
            .ok();
            table = Some(cloud_table(&cloud));
            TaskOutput::Sample(sample_summary(&cloud))
        }
        TaskSpec::Estimate(t) => {
            let ifs = config.ifs()?;
            let mu = config.measure(ifs.len())?;
            let cloud = draw(&ifs, &mu, &t.cloud, derive_seed(seed, TAG_CLOUD))?;
            let est_cfg = &t.estimator;
            let estimate =
                local_dimension(&cloud, est_cfg).map_err(|e| e.prefixed("task.estimator"))?;
            let curve = match est_cfg.method {
                Method::Knn => None,
                _ => Some(scaling_curve(&cloud, est_cfg)?),
            };
            let quarters = if t.quarters {
                Some(exact_dimensionality_proxy(&cloud, est_cfg)?)
            } else {
                None
            };
            writeln!(
                summary,
                "dimension estimate = {:.6} +/- {:.6}",
                estimate.value, estimate.ci_half_width
            )
            .ok();
            if let Some(q) = &quarters {
                writeln!(
                    summary,
                    "quarter split: max gap {:.6}, {}",
                    q.max_gap,
                    if q.pass { "consistent" } else { "inconsistent" }
                )
                .ok();
            }
            if let Some(c) = &curve {
                table = Some(Table {
                    header: vec!["radius".into(), "log_value".into()],
                    rows: c
                        .radii
                        .iter()
                        .zip(&c.log_values)
                        .map(|(r, v)| {
                            vec![
                                sentinel::format(*r),
                                v.map_or_else(|| "nan".into(), sentinel::format),
                            ]
                        })
                        .collect(),
                });
            }
            TaskOutput::Estimate(EstimateOutput {
                sample: sample_summary(&cloud),
                estimate,
                curve,
                quarters,
            })
        }
        TaskSpec::Carpet(t) => {
            let digits: Vec<(usize, usize)> = t.digits.iter().map(|d| (d[0], d[1])).collect();
            let oracle = carpet_oracle(t.n_cols, t.m_rows, &digits, t.probs.as_deref())
                .map_err(|e| e.prefixed("task"))?;
            let dim_ly = lyapunov_dimension(oracle.entropies.h0(), &oracle.spectrum)?;
            let sharpness = sharpness_check(&oracle.entropies, &oracle.spectrum)?;
            writeln!(
                summary,
                "dim_mu = {:.6}, dim_K = {:.6}, dim_LY = {:.6}",
                oracle.dim_mu.value, oracle.dim_k.value, dim_ly.value
            )
            .ok();
            let empirical = match &t.empirical {
                None => None,
                Some(e) => {
                    let cloud = draw(
                        &oracle.ifs,
                        &oracle.measure,
                        &e.cloud,
                        derive_seed(seed, TAG_CLOUD),
                    )?;
                    let strong_axis = from_rows(&[vec![1.0], vec![0.0]]);
                    let conservation = conservation_check(&cloud, &strong_axis, &e.conservation)?;
                    let h = oracle.entropies.values();
                    let predicted_proj = (h[0] - h[1]) / (t.m_rows as f64).ln();
                    let predicted_slice = h[1] / (t.n_cols as f64).ln();
                    writeln!(
                        summary,
                        "empirical: total {:.4}, projection {:.4} (predicted {:.4}), slice {:.4} (predicted {:.4})",
                        conservation.dim_total.value, conservation.dim_proj.value, predicted_proj, conservation.dim_slice.value, predicted_slice
                    )
                    .ok();
                    Some(CarpetCheck {
                        sample: sample_summary(&cloud),
                        conservation,
                        predicted_proj,
                        predicted_slice,
                    })
                }
            };
            TaskOutput::Carpet(Box::new(CarpetOutput {
                row_marginal: oracle.row_marginal,
                entropies: oracle.entropies,
                spectrum: oracle.spectrum,
                dim_mu: oracle.dim_mu,
                dim_k: oracle.dim_k,
                dim_ly,
                sharpness,
                empirical,
            }))
        }
        TaskSpec::Sweep(t) => {
            let ifs = config.ifs()?;
            let mu = config.measure(ifs.len())?;
            let rep = translation_sweep(&ifs.matrices(), &mu, &t.grid, &t.sweep)
                .map_err(|e| e.prefixed("task"))?;
            writeln!(summary, "min(d, dim_LY) = {:.6}", rep.bound).ok();
            for (g, row) in rep.rows.iter().enumerate() {
                writeln!(
                    summary,
                    "grid[{g}]: {:.4} +/- {:.4}{}",
                    row.estimate.value,
                    row.estimate.ci_half_width,
                    if row.exceptional { "  exceptional" } else { "" }
                )
                .ok();
            }
            table = Some(Table {
                header: vec![
                    "grid_index".into(),
                    "translations".into(),
                    "estimate".into(),
                    "ci_half_width".into(),
                    "bound".into(),
                    "exceptional".into(),
                ],
                rows: rep
                    .rows
                    .iter()
                    .enumerate()
                    .map(|(g, row)| {
                        let a: Vec<String> = row
                            .translations
                            .iter()
                            .flatten()
                            .map(|&x| sentinel::format(x))
                            .collect();
                        vec![
                            g.to_string(),
                            a.join(" "),
                            sentinel::format(row.estimate.value),
                            sentinel::format(row.estimate.ci_half_width),
                            sentinel::format(rep.bound),
                            row.exceptional.to_string(),
                        ]
                    })
                    .collect(),
            });
            TaskOutput::Sweep(rep)
        }
        TaskSpec::Conserve(t) => {
            let ifs = config.ifs()?;
            let mu = config.measure(ifs.len())?;
            let w = t.basis(ifs.dim())?;
            let cloud = draw(&ifs, &mu, &t.cloud, derive_seed(seed, TAG_CLOUD))?;
            let report =
                conservation_check(&cloud, &w, &t.conservation).map_err(|e| e.prefixed("task"))?;
            writeln!(
                summary,
                "total {:.4} = projection {:.4} + slice {:.4} + residual {:.4} (+/- {:.4})",
                report.dim_total.value,
                report.dim_proj.value,
                report.dim_slice.value,
                report.residual,
                report.residual_ci
            )
            .ok();
            TaskOutput::Conserve(ConserveOutput {
                sample: sample_summary(&cloud),
                report,
            })
        }
        TaskSpec::Suite(t) => {
            let mut families = t
                .families
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    let built = f.ifs.build().and_then(|ifs| {
                        let measure = f.measure.build(ifs.len())?;
                        Ok(Family {
                            label: f.label.clone(),
                            ifs,
                            measure,
                        })
                    });
                    built.map_err(|e| e.prefixed(&format!("task.families[{i}]")))
                })
                .collect::<Result<Vec<_>>>()?;
            families.extend(random_planar_families(
                t.random_planar,
                derive_seed(seed, TAG_CLOUD),
            ));
            let rows = upper_bound_suite(&families, &t.suite)?;
            let failures = rows.iter().filter(|r| !r.pass).count();
            for r in &rows {
                writeln!(
                    summary,
                    "{}: estimate {:.4} +/- {:.4}, bound {:.4}: {}",
                    r.label,
                    r.estimate.value,
                    r.estimate.ci_half_width,
                    r.bound,
                    if r.pass { "pass" } else { "FAIL" }
                )
                .ok();
            }
            table = Some(Table {
                header: vec![
                    "label".into(),
                    "estimate".into(),
                    "ci_half_width".into(),
                    "dim_ly".into(),
                    "bound".into(),
                    "pass".into(),
                ],
                rows: rows
                    .iter()
                    .map(|r| {
                        vec![
                            r.label.clone(),
                            sentinel::format(r.estimate.value),
                            sentinel::format(r.estimate.ci_half_width),
                            sentinel::format(r.dim_ly.value),
                            sentinel::format(r.bound),
                            r.pass.to_string(),
                        ]
                    })
                    .collect(),
            });
            TaskOutput::Suite(SuiteOutput { rows, failures })
        }
    };
    let report = Report {
        task: config.task.name().to_string(),
        seed,
        config: config.clone(),
        provenance: Provenance::new(config.task.name(), config),
        output,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(Outcome {
        report,
        table,
        summary,
    })
}
