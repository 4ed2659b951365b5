//! Projections, slab slices and the experiment drivers built on them.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    anchors, check_basis, choose_depth, local_dimension, sample_points, DimEstimate,
    EstimatorConfig, PointCloud,
};
use crate::cocycle;
use crate::dimension::{lyapunov_dimension, DimValue};
use crate::error::{Error, Result};
use crate::ifs::AffineIFS;
use crate::linalg::{op_norm, orthogonal_complement, Matrix, Vector};
use crate::measure::ShiftMeasure;
use crate::provenance::Provenance;
use crate::rng::derive_seed;

const TAG_SLABS: u64 = 0x51AB;
const TAG_SPECTRUM: u64 = 0x5BEC;
const TAG_SAMPLE: u64 = 0x5A3B;

fn columns(m: &Matrix) -> Vec<Vec<f64>> {
    m.column_iter()
        .map(|c| c.iter().copied().collect())
        .collect()
}

fn atom_estimate(config: &EstimatorConfig, provenance: Provenance) -> DimEstimate {
    DimEstimate {
        value: 0.0,
        ci_half_width: 0.0,
        method: config.method,
        radius_range: (0.0, 0.0),
        n_pairs: None,
        k: None,
        n_anchors: None,
        provenance,
    }
}

/// Dimension of the image of the cloud under orthogonal projection onto the
/// span of `w_perp` (orthonormal columns).
pub fn projected_dimension(
    cloud: &PointCloud,
    w_perp: &Matrix,
    config: &EstimatorConfig,
) -> Result<DimEstimate> {
    check_basis(w_perp, cloud.dim(), "w_perp")?;
    let mut est = local_dimension(&cloud.project(w_perp)?, config)?;
    est.provenance = Provenance::new(
        "projected_dimension",
        &(cloud.provenance(), columns(w_perp), config),
    );
    Ok(est)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SliceConfig {
    /// Slab half-width as a fraction of the cloud diameter.
    pub halfwidth: f64,
    pub n_anchors: usize,
    pub min_points: usize,
    /// Radii below this multiple of the slab half-width are dropped from the
    /// band, since at those scales a slab looks like a thickened projection.
    pub min_radius_factor: f64,
    pub estimator: EstimatorConfig,
}

impl Default for SliceConfig {
    fn default() -> Self {
        SliceConfig {
            halfwidth: 0.002,
            n_anchors: 32,
            min_points: 500,
            min_radius_factor: 2.0,
            estimator: EstimatorConfig {
                r_max: 0.2,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceEstimate {
    /// Mean over slabs with a normal-theory interval.
    pub estimate: DimEstimate,
    pub median: f64,
    /// Absolute half-width requested; individual slabs may have used twice this.
    pub halfwidth: f64,
    pub slab_values: Vec<f64>,
    pub slab_sizes: Vec<usize>,
    pub widened: usize,
}

/// Dimension of the measure restricted to thin slabs parallel to the span of
/// `w` (orthonormal columns), through anchors drawn from the cloud.
pub fn slice_dimension(
    cloud: &PointCloud,
    w: &Matrix,
    config: &SliceConfig,
) -> Result<SliceEstimate> {
    check_basis(w, cloud.dim(), "subspace")?;
    config
        .estimator
        .validate()
        .map_err(|e| e.prefixed("estimator"))?;
    if !(config.halfwidth > 0.0 && config.halfwidth.is_finite()) {
        return Err(Error::invalid(
            "halfwidth",
            format!("must be positive, got {}", config.halfwidth),
        ));
    }
    if config.n_anchors < 2 {
        return Err(Error::invalid("n_anchors", "must be at least 2"));
    }
    if !(config.min_radius_factor >= 0.0 && config.min_radius_factor.is_finite()) {
        return Err(Error::invalid(
            "min_radius_factor",
            "must be finite and non-negative",
        ));
    }
    let provenance = Provenance::new("slab_slice", &(cloud.provenance(), columns(w), config));
    let hw0 = config.halfwidth * cloud.diameter();
    if hw0 == 0.0 {
        return Ok(SliceEstimate {
            estimate: atom_estimate(&config.estimator, provenance),
            median: 0.0,
            halfwidth: 0.0,
            slab_values: vec![],
            slab_sizes: vec![],
            widened: 0,
        });
    }
    let perp = orthogonal_complement(w);
    let perp_cloud = if perp.ncols() > 0 {
        Some(cloud.project(&perp)?)
    } else {
        None
    };
    let along = cloud.project(w)?;
    let q = w.ncols();
    let scale = if config.estimator.relative {
        cloud.diameter()
    } else {
        1.0
    };
    let picks = anchors(
        cloud.len(),
        config.n_anchors,
        derive_seed(config.estimator.seed, TAG_SLABS),
    );

    let slabs: Vec<Result<(f64, usize, bool)>> = picks
        .par_iter()
        .enumerate()
        .map(|(s, &a)| {
            let mut hw = hw0;
            let mut widened = false;
            let members = loop {
                let members: Vec<usize> = match &perp_cloud {
                    None => (0..cloud.len()).collect(),
                    Some(pc) => {
                        let x0 = pc.point(a);
                        (0..pc.len())
                            .filter(|&i| pc.point(i).iter().zip(x0).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() <= hw * hw)
                            .collect()
                    }
                };
                if members.len() >= config.min_points {
                    break members;
                }
                if widened {
                    return Err(Error::InsufficientData(format!(
                        "slab through point {a} keeps {} points at half-width {hw:e}; at least {} are needed",
                        members.len(),
                        config.min_points
                    )));
                }
                log::warn!("slab through point {a} keeps {} points; widening to {:e}", members.len(), 2.0 * hw);
                hw *= 2.0;
                widened = true;
            };
            let rows: Vec<f64> = members.iter().flat_map(|&i| along.point(i).iter().copied()).collect();
            let slab = along.with_rows(rows, q);
            let r_min = (config.estimator.r_min * scale).max(config.min_radius_factor * hw);
            let r_max = config.estimator.r_max * scale;
            if !(r_max > 4.0 * r_min) {
                return Err(Error::InsufficientData(format!(
                    "slab through point {a}: radius band [{r_min:e}, {r_max:e}] is too narrow above the slab half-width"
                )));
            }
            let inner = EstimatorConfig {
                seed: derive_seed(config.estimator.seed, TAG_SLABS + 1 + s as u64),
                relative: false,
                r_min,
                r_max,
                ..config.estimator.clone()
            };
            let est = local_dimension(&slab, &inner)?;
            Ok((est.value, members.len(), widened))
        })
        .collect();
    let slabs = slabs.into_iter().collect::<Result<Vec<_>>>()?;

    let mut values: Vec<f64> = slabs.iter().map(|s| s.0).collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    let slab_values = values.clone();
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    let median = if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    };
    let r = (config.estimator.r_min, config.estimator.r_max);
    Ok(SliceEstimate {
        estimate: DimEstimate {
            value: mean,
            ci_half_width: 1.96 * sd / n.sqrt(),
            method: config.estimator.method,
            radius_range: r,
            n_pairs: None,
            k: None,
            n_anchors: Some(slabs.len()),
            provenance,
        },
        median,
        halfwidth: hw0,
        slab_sizes: slabs.iter().map(|s| s.1).collect(),
        widened: slabs.iter().filter(|s| s.2).count(),
        slab_values,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConservationConfig {
    pub estimator: EstimatorConfig,
    pub slice: SliceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservationReport {
    pub dim_total: DimEstimate,
    pub dim_proj: DimEstimate,
    pub dim_slice: DimEstimate,
    pub slice_halfwidth: f64,
    /// Orthonormal basis of `W`, one entry per column.
    pub subspace: Vec<Vec<f64>>,
    pub residual: f64,
    pub residual_ci: f64,
}

/// Compare the dimension of the cloud with the sum of the dimension of its
/// projection onto `W^perp` and of its slices parallel to `W`.
pub fn conservation_check(
    cloud: &PointCloud,
    w: &Matrix,
    config: &ConservationConfig,
) -> Result<ConservationReport> {
    check_basis(w, cloud.dim(), "subspace")?;
    let dim_total = local_dimension(cloud, &config.estimator)?;
    let perp = orthogonal_complement(w);
    let dim_proj = if perp.ncols() == 0 {
        atom_estimate(
            &config.estimator,
            Provenance::new("projected_dimension", &(cloud.provenance(), "zero")),
        )
    } else {
        projected_dimension(cloud, &perp, &config.estimator)?
    };
    let slice = slice_dimension(cloud, w, &config.slice)?;
    let dim_slice = slice.estimate;
    let residual = dim_total.value - dim_proj.value - dim_slice.value;
    let residual_ci = [&dim_total, &dim_proj, &dim_slice]
        .iter()
        .map(|e| e.ci_half_width.powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(ConservationReport {
        dim_total,
        dim_proj,
        dim_slice,
        slice_halfwidth: slice.halfwidth,
        subspace: columns(w),
        residual,
        residual_ci,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarterReport {
    pub estimates: Vec<DimEstimate>,
    pub max_gap: f64,
    /// Every pair of quarter intervals overlaps.
    pub pass: bool,
}

/// Split the cloud into four consecutive blocks of samples and estimate each
/// separately.
pub fn exact_dimensionality_proxy(
    cloud: &PointCloud,
    config: &EstimatorConfig,
) -> Result<QuarterReport> {
    let n = cloud.len();
    if n < 4 {
        return Err(Error::InsufficientData(format!(
            "{n} points cannot be split into quarters"
        )));
    }
    let estimates = (0..4)
        .map(|q| local_dimension(&cloud.subset(q * n / 4..(q + 1) * n / 4)?, config))
        .collect::<Result<Vec<_>>>()?;
    let mut max_gap: f64 = 0.0;
    let mut pass = true;
    for i in 0..4 {
        for j in i + 1..4 {
            let (a, b) = (&estimates[i], &estimates[j]);
            let gap = (a.value - b.value).abs();
            max_gap = max_gap.max(gap);
            pass &= gap <= a.ci_half_width + b.ci_half_width;
        }
    }
    Ok(QuarterReport {
        estimates,
        max_gap,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub n_points: usize,
    /// Fixed truncation depth; chosen from `tail_tol` when absent.
    pub depth: Option<usize>,
    pub tail_tol: f64,
    pub estimator: EstimatorConfig,
    pub spectrum_steps: usize,
    pub spectrum_reps: usize,
    /// Allowance for finite-scale bias when flagging a sweep point as
    /// exceptional.
    pub bias_margin: f64,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            n_points: 100_000,
            depth: None,
            tail_tol: 1e-6,
            estimator: EstimatorConfig::default(),
            spectrum_steps: 20_000,
            spectrum_reps: 8,
            bias_margin: 0.05,
            seed: 0,
        }
    }
}

/// Suite settings are the same knobs as a sweep.
pub type SuiteConfig = SweepConfig;

fn lyapunov_bound(
    mats: &[Matrix],
    mu: &ShiftMeasure,
    config: &SweepConfig,
    seed: u64,
) -> Result<DimValue> {
    let spec = cocycle::spectrum(
        mats,
        mu,
        config.spectrum_steps,
        config.spectrum_reps,
        None,
        derive_seed(seed, TAG_SPECTRUM),
    )?;
    lyapunov_dimension(mu.entropy(), &spec)
}

fn estimate_family(
    ifs: &AffineIFS,
    mu: &ShiftMeasure,
    config: &SweepConfig,
    seed: u64,
) -> Result<DimEstimate> {
    let sample_seed = derive_seed(seed, TAG_SAMPLE);
    let depth = match config.depth {
        Some(d) => d,
        None => choose_depth(ifs, mu, config.tail_tol, sample_seed)?,
    };
    let cloud = sample_points(ifs, mu, config.n_points, depth, sample_seed)?;
    local_dimension(
        &cloud,
        &EstimatorConfig {
            seed,
            ..config.estimator.clone()
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub translations: Vec<Vec<f64>>,
    pub estimate: DimEstimate,
    /// `estimate + 3 CI + bias_margin < min(d, dim_LY)`.
    pub exceptional: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub dim_ly: DimValue,
    pub bound: f64,
    pub norms_below_half: bool,
    pub rows: Vec<SweepRow>,
}

/// Estimate the dimension for each translation vector tuple in `grid`, with
/// the linear parts and the measure held fixed.
pub fn translation_sweep(
    mats: &[Matrix],
    mu: &ShiftMeasure,
    grid: &[Vec<Vec<f64>>],
    config: &SweepConfig,
) -> Result<SweepReport> {
    if mats.is_empty() {
        return Err(Error::invalid(
            "matrices",
            "at least one matrix is required",
        ));
    }
    if !(config.bias_margin >= 0.0 && config.bias_margin.is_finite()) {
        return Err(Error::invalid(
            "bias_margin",
            format!("must be finite and nonnegative, got {}", config.bias_margin),
        ));
    }
    let norms_below_half = mats.iter().all(|m| op_norm(m) < 0.5);
    if !norms_below_half {
        log::warn!("some matrix has norm at least 1/2; almost-sure equality with the Lyapunov dimension is not guaranteed");
    }
    let dim_ly = lyapunov_bound(mats, mu, config, config.seed)?;
    let bound = dim_ly.capped;
    let rows = grid
        .par_iter()
        .enumerate()
        .map(|(g, a)| {
            let translations: Vec<Vector> =
                a.iter().map(|t| Vector::from_column_slice(t)).collect();
            let ifs = AffineIFS::with_translations(mats, &translations)
                .map_err(|e| e.prefixed(&format!("grid[{g}]")))?;
            let estimate = estimate_family(&ifs, mu, config, derive_seed(config.seed, g as u64))?;
            Ok(SweepRow {
                translations: a.clone(),
                exceptional: estimate.value + 3.0 * estimate.ci_half_width + config.bias_margin
                    < bound,
                estimate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport {
        dim_ly,
        bound,
        norms_below_half,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Family {
    pub label: String,
    pub ifs: AffineIFS,
    pub measure: ShiftMeasure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub label: String,
    pub estimate: DimEstimate,
    pub dim_ly: DimValue,
    pub bound: f64,
    /// `bound - (estimate - 3 CI)`; negative means the bound was violated.
    pub margin: f64,
    pub pass: bool,
}

/// Check `estimate - 3 CI <= min(d, dim_LY)` on each family.
pub fn upper_bound_suite(families: &[Family], config: &SuiteConfig) -> Result<Vec<BoundRow>> {
    families
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let seed = derive_seed(config.seed, i as u64);
            let dim_ly = lyapunov_bound(&f.ifs.matrices(), &f.measure, config, seed)?;
            let estimate = estimate_family(&f.ifs, &f.measure, config, seed)?;
            let bound = dim_ly.capped;
            let margin = bound - (estimate.value - 3.0 * estimate.ci_half_width);
            Ok(BoundRow {
                label: f.label.clone(),
                estimate,
                dim_ly,
                bound,
                margin,
                pass: margin >= 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.prefixed("families"))
}

/// Random planar pairs: matrix entries uniform in `[-1, 1]` rescaled to an
/// operator norm drawn from `[0.3, 0.6]`, translations uniform in `[-1, 1]^2`,
/// Bernoulli weights `(p, 1 - p)` with `p` uniform in `[0.2, 0.8]`.
pub fn random_planar_families(count: usize, seed: u64) -> Vec<Family> {
    (0..count)
        .map(|i| {
            let mut r = crate::rng::stream(seed, i as u64);
            let mut mats = Vec::new();
            let mut shifts = Vec::new();
            for _ in 0..2 {
                let m = Matrix::from_fn(2, 2, |_, _| r.gen_range(-1.0..1.0));
                let norm: f64 = r.gen_range(0.3..0.6);
                mats.push(&m * (norm / op_norm(&m)));
                shifts.push(Vector::from_fn(2, |_, _| r.gen_range(-1.0..1.0)));
            }
            let p: f64 = r.gen_range(0.2..0.8);
            Family {
                label: format!("random-{i}"),
                ifs: AffineIFS::with_translations(&mats, &shifts).expect("finite random maps"),
                measure: ShiftMeasure::bernoulli(vec![p, 1.0 - p]).expect("valid weights"),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::Method;
    use crate::linalg::from_rows;

    fn square_cloud(n: usize, seed: u64) -> PointCloud {
        let half = vec![vec![0.5, 0.0], vec![0.0, 0.5]];
        let ifs = AffineIFS::from_parts(
            &vec![half; 4],
            &[
                vec![0.0, 0.0],
                vec![0.5, 0.0],
                vec![0.0, 0.5],
                vec![0.5, 0.5],
            ],
        )
        .unwrap();
        sample_points(&ifs, &ShiftMeasure::uniform(4), n, 40, seed).unwrap()
    }

    fn axis(d: usize, i: usize) -> Matrix {
        let mut m = Matrix::zeros(d, 1);
        m[(i, 0)] = 1.0;
        m
    }

    #[test]
    fn square_projection_slice_and_conservation() {
        let cloud = square_cloud(200_000, 2);
        let cfg = EstimatorConfig::default();
        let diag = from_rows(&[vec![0.6], vec![0.8]]);
        let p = projected_dimension(&cloud, &diag, &cfg).unwrap();
        assert!((p.value - 1.0).abs() < 0.05, "{p:?}");
        let s = slice_dimension(&cloud, &axis(2, 1), &SliceConfig::default()).unwrap();
        assert!((s.estimate.value - 1.0).abs() < 0.1, "{s:?}");
        let r = conservation_check(&cloud, &axis(2, 0), &ConservationConfig::default()).unwrap();
        assert!(r.residual.abs() < 0.15, "{r:?}");
        assert!(r.dim_proj.value <= r.dim_total.value + r.residual_ci);
    }

    #[test]
    fn identity_projection_matches_the_cloud() {
        let cloud = square_cloud(50_000, 4);
        let cfg = EstimatorConfig::default();
        let id = Matrix::identity(2, 2);
        let a = projected_dimension(&cloud, &id, &cfg).unwrap();
        let b = local_dimension(&cloud, &cfg).unwrap();
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn thin_slabs_are_refused() {
        let cloud = square_cloud(2000, 1);
        let cfg = SliceConfig {
            halfwidth: 1e-4,
            ..Default::default()
        };
        assert!(matches!(
            slice_dimension(&cloud, &axis(2, 0), &cfg),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn overlapping_pair_is_exceptional() {
        let mats = vec![from_rows(&[vec![0.5]]); 2];
        let grid = vec![vec![vec![0.0], vec![0.5]], vec![vec![0.0], vec![0.0]]];
        let cfg = SweepConfig {
            n_points: 50_000,
            spectrum_steps: 2000,
            ..Default::default()
        };
        let rep = translation_sweep(&mats, &ShiftMeasure::uniform(2), &grid, &cfg).unwrap();
        assert!((rep.bound - 1.0).abs() < 1e-9);
        assert!((rep.rows[0].estimate.value - 1.0).abs() < 0.05);
        assert_eq!(rep.rows[1].estimate.value, 0.0);
        assert!(rep.rows[1].exceptional);
        assert!(!rep.rows[0].exceptional);
        assert!(!rep.norms_below_half);
        let bad = SweepConfig {
            bias_margin: -0.1,
            ..cfg
        };
        assert!(translation_sweep(&mats, &ShiftMeasure::uniform(2), &grid, &bad).is_err());
    }

    #[test]
    fn quarters_agree_on_the_square() {
        let cloud = square_cloud(200_000, 8);
        let rep = exact_dimensionality_proxy(&cloud, &EstimatorConfig::with_method(Method::Mass))
            .unwrap();
        assert!(rep.pass, "{rep:?}");
    }
}
