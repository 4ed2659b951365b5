//! Monte Carlo layer: point clouds drawn from the projected measure and
//! empirical dimension estimates computed on them.
//!
//! Three local estimators are available. `Correlation` fits the slope of the
//! pair-correlation integral from a random pair subsample, `Knn` averages
//! Levina-Bickel maximum-likelihood estimates built from nearest-neighbour
//! distances, and `Mass` fits the slope of the mean log ball mass around
//! anchor points drawn from the cloud. The first measures the correlation
//! dimension; the other two measure the typical local dimension, which is
//! what the exact-dimensionality results speak about when the measure is not
//! homogeneous.

mod analysis;
mod kdtree;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ifs::AffineIFS;
use crate::linalg::Matrix;
use crate::measure::ShiftMeasure;
use crate::provenance::{digest, Provenance};
use crate::rng;

pub use analysis::{
    conservation_check, exact_dimensionality_proxy, projected_dimension, random_planar_families,
    slice_dimension, translation_sweep, upper_bound_suite, BoundRow, ConservationConfig,
    ConservationReport, Family, QuarterReport, SliceConfig, SliceEstimate, SuiteConfig,
    SweepConfig, SweepReport, SweepRow,
};
pub use kdtree::KdTree;

const SAMPLE_CHUNK: usize = 4096;
const TAG_CONTRACTION: u64 = 0xC017AC7;
const TAG_ANCHORS: u64 = 0xA4C4_0125;
const TAG_PAIRS: u64 = 0x9_A125;
const TAG_BOOTSTRAP: u64 = 0xB00757;
const MAX_PAIR_BUDGET: u64 = 1_000_000_000;
const MIN_PAIRS: u64 = 30;
const MIN_MEDIAN_NEIGHBOURS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloudProvenance {
    pub ifs_digest: String,
    pub measure_digest: String,
    pub depth: usize,
    pub seed: u64,
    pub n: usize,
}

/// An immutable `N x d` sample, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<f64>,
    dim: usize,
    provenance: CloudProvenance,
    tail_bound: f64,
}

impl PointCloud {
    /// Wrap externally produced coordinates. `points.len()` must be a
    /// positive multiple of `dim` and every coordinate finite.
    pub fn from_points(points: Vec<f64>, dim: usize, provenance: CloudProvenance) -> Result<Self> {
        if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(Error::invalid(
                "points",
                format!(
                    "{} coordinates do not form rows of length {dim}",
                    points.len()
                ),
            ));
        }
        if let Some(i) = points.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(
                format!("points[{}][{}]", i / dim, i % dim),
                "coordinate is not finite",
            ));
        }
        Ok(PointCloud {
            points,
            dim,
            provenance,
            tail_bound: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn provenance(&self) -> &CloudProvenance {
        &self.provenance
    }

    /// Uniform bound on the truncation error of every point; `+inf` when the
    /// depth was chosen by the statistical rule.
    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    /// Diagonal of the bounding box.
    pub fn diameter(&self) -> f64 {
        let d = self.dim;
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for p in self.points.chunks(d) {
            for k in 0..d {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        lo.iter()
            .zip(&hi)
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt()
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let mut m = vec![0.0; self.dim];
        for p in self.points.chunks(self.dim) {
            m.iter_mut().zip(p).for_each(|(a, x)| *a += x);
        }
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    /// Sample covariance (divisor `N - 1`).
    pub fn covariance(&self) -> Matrix {
        let d = self.dim;
        let m = self.mean();
        let mut c = Matrix::zeros(d, d);
        for p in self.points.chunks(d) {
            for i in 0..d {
                for j in 0..d {
                    c[(i, j)] += (p[i] - m[i]) * (p[j] - m[j]);
                }
            }
        }
        c / (self.len().max(2) - 1) as f64
    }

    /// Coordinates with respect to the orthonormal columns of `basis`.
    pub fn project(&self, basis: &Matrix) -> Result<PointCloud> {
        check_basis(basis, self.dim, "basis")?;
        let q = basis.ncols();
        let mut out = Vec::with_capacity(self.len() * q);
        for p in self.points.chunks(self.dim) {
            for j in 0..q {
                out.push((0..self.dim).map(|i| basis[(i, j)] * p[i]).sum());
            }
        }
        Ok(PointCloud {
            points: out,
            dim: q,
            provenance: self.provenance.clone(),
            tail_bound: self.tail_bound,
        })
    }

    /// Rows `range` as a new cloud.
    pub fn subset(&self, range: std::ops::Range<usize>) -> Result<PointCloud> {
        if range.is_empty() || range.end > self.len() {
            return Err(Error::invalid(
                "range",
                format!("{range:?} is not a nonempty subrange of 0..{}", self.len()),
            ));
        }
        Ok(PointCloud {
            points: self.points[range.start * self.dim..range.end * self.dim].to_vec(),
            dim: self.dim,
            provenance: self.provenance.clone(),
            tail_bound: self.tail_bound,
        })
    }

    fn with_rows(&self, rows: Vec<f64>, dim: usize) -> PointCloud {
        PointCloud {
            points: rows,
            dim,
            provenance: self.provenance.clone(),
            tail_bound: self.tail_bound,
        }
    }
}

pub(crate) fn check_basis(basis: &Matrix, d: usize, path: &str) -> Result<()> {
    if basis.nrows() != d || basis.ncols() == 0 {
        return Err(Error::invalid(
            path,
            format!(
                "expected a {d} x q basis with q >= 1, got {} x {}",
                basis.nrows(),
                basis.ncols()
            ),
        ));
    }
    let defect = crate::linalg::orthonormality_defect(basis);
    if !(defect <= 1e-9) {
        return Err(Error::invalid(
            path,
            format!("columns are not orthonormal (defect {defect:e})"),
        ));
    }
    Ok(())
}

/// Depth that keeps the truncation error below `rel_tol` times the attractor
/// scale `max|a_j| / (1 - rho)` when the maps are uniformly contracting;
/// otherwise the statistical rule `10 log 10 / (-lambda_1)`.
pub fn choose_depth(ifs: &AffineIFS, mu: &ShiftMeasure, rel_tol: f64, seed: u64) -> Result<usize> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::invalid(
            "tail_tol",
            format!("must lie in (0, 1), got {rel_tol}"),
        ));
    }
    let rho = ifs.contraction_factor();
    if rho < 1.0 {
        let scale = ifs.max_translation_norm() / (1.0 - rho);
        if scale == 0.0 {
            return Ok(1);
        }
        return Ok(ifs.depth_for_tolerance(rel_tol * scale).unwrap_or(1));
    }
    let lambda = contraction_rate(ifs, mu, seed)?;
    Ok(statistical_depth(lambda))
}

fn statistical_depth(lambda: f64) -> usize {
    (10.0 * std::f64::consts::LN_10 / -lambda).ceil() as usize
}

fn contraction_rate(ifs: &AffineIFS, mu: &ShiftMeasure, seed: u64) -> Result<f64> {
    let est = ifs.average_contraction(mu, 2000, 8, rng::derive_seed(seed, TAG_CONTRACTION))?;
    if est.lambda_hat >= 0.0 {
        return Err(Error::NotContracting(format!(
            "estimated top exponent {:.6} is not negative; the coding map does not converge",
            est.lambda_hat
        )));
    }
    Ok(est.lambda_hat)
}

/// Draw `n` points `pi(x)` with `x` distributed by `mu`, truncating the
/// coding map at `depth` symbols.
pub fn sample_points(
    ifs: &AffineIFS,
    mu: &ShiftMeasure,
    n: usize,
    depth: usize,
    seed: u64,
) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::invalid("n_points", "must be at least 1"));
    }
    if depth == 0 {
        return Err(Error::invalid("depth", "must be at least 1"));
    }
    mu.validate()?;
    if mu.alphabet_size() != ifs.len() {
        return Err(Error::invalid(
            "measure",
            format!(
                "alphabet of size {} does not match {} maps",
                mu.alphabet_size(),
                ifs.len()
            ),
        ));
    }
    let rho = ifs.contraction_factor();
    let tail_bound = if rho < 1.0 {
        rho.powi(depth.min(i32::MAX as usize) as i32) * ifs.max_translation_norm() / (1.0 - rho)
    } else {
        let lambda = contraction_rate(ifs, mu, seed)?;
        let needed = statistical_depth(lambda);
        if depth < needed {
            log::warn!("depth {depth} is below the statistical tail rule ({needed}); truncation error is not controlled");
        }
        f64::INFINITY
    };

    let d = ifs.dim();
    let mats: Vec<Vec<f64>> = ifs
        .maps()
        .iter()
        .map(|m| m.matrix().transpose().as_slice().to_vec())
        .collect();
    let shifts: Vec<Vec<f64>> = ifs
        .maps()
        .iter()
        .map(|m| m.translation().as_slice().to_vec())
        .collect();
    let sampler = mu.sampler();
    let n_chunks = n.div_ceil(SAMPLE_CHUNK);
    let chunks: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let count = SAMPLE_CHUNK.min(n - c * SAMPLE_CHUNK);
            let mut r = rng::stream(seed, c as u64);
            let mut word = vec![0usize; depth];
            let mut out = Vec::with_capacity(count * d);
            let mut x = vec![0.0; d];
            let mut y = vec![0.0; d];
            for _ in 0..count {
                sampler.fill(&mut word, &mut r);
                x.iter_mut().for_each(|v| *v = 0.0);
                for &s in word.iter().rev() {
                    let m = &mats[s];
                    for i in 0..d {
                        y[i] = shifts[s][i] + (0..d).map(|k| m[i * d + k] * x[k]).sum::<f64>();
                    }
                    std::mem::swap(&mut x, &mut y);
                }
                out.extend_from_slice(&x);
            }
            out
        })
        .collect();
    let points = chunks.concat();
    if points.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("sampled coordinates overflowed".into()));
    }
    Ok(PointCloud {
        points,
        dim: d,
        provenance: CloudProvenance {
            ifs_digest: digest(ifs),
            measure_digest: digest(mu),
            depth,
            seed,
            n,
        },
        tail_bound,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Correlation,
    Knn,
    Mass,
}

/// Knobs for [`local_dimension`]. Radii are fractions of the cloud diameter
/// when `relative` is set. The `Knn` method ignores the radius band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub method: Method,
    pub r_min: f64,
    pub r_max: f64,
    pub relative: bool,
    pub n_radii: usize,
    pub fit_radii: usize,
    pub pair_budget: u64,
    pub k: usize,
    pub n_anchors: usize,
    pub n_blocks: usize,
    pub n_bootstrap: usize,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            method: Method::Mass,
            r_min: 1e-3,
            r_max: 1e-1,
            relative: true,
            n_radii: 12,
            fit_radii: 8,
            pair_budget: 50_000_000,
            k: 20,
            n_anchors: 4000,
            n_blocks: 20,
            n_bootstrap: 200,
            seed: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn with_method(method: Method) -> Self {
        EstimatorConfig {
            method,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_min > 0.0 && self.r_min < self.r_max && self.r_max.is_finite()) {
            return Err(Error::invalid(
                "r_min",
                format!(
                    "need 0 < r_min < r_max, got [{}, {}]",
                    self.r_min, self.r_max
                ),
            ));
        }
        if self.n_radii < 3 {
            return Err(Error::invalid("n_radii", "must be at least 3"));
        }
        if self.fit_radii < 3 || self.fit_radii > self.n_radii {
            return Err(Error::invalid(
                "fit_radii",
                format!("must lie in [3, n_radii = {}]", self.n_radii),
            ));
        }
        if self.pair_budget == 0 || self.pair_budget > MAX_PAIR_BUDGET {
            return Err(Error::invalid(
                "pair_budget",
                format!("must lie in [1, {MAX_PAIR_BUDGET}]"),
            ));
        }
        if self.k < 3 {
            return Err(Error::invalid("k", "must be at least 3"));
        }
        if self.n_anchors == 0 {
            return Err(Error::invalid("n_anchors", "must be at least 1"));
        }
        if self.n_blocks < 2 {
            return Err(Error::invalid("n_blocks", "must be at least 2"));
        }
        if self.n_bootstrap < 2 {
            return Err(Error::invalid("n_bootstrap", "must be at least 2"));
        }
        Ok(())
    }

    fn radii(&self, diameter: f64) -> Vec<f64> {
        let scale = if self.relative { diameter } else { 1.0 };
        let ratio = self.r_max / self.r_min;
        (0..self.n_radii)
            .map(|k| scale * self.r_min * ratio.powf(k as f64 / (self.n_radii - 1) as f64))
            .collect()
    }

    fn fit_band(&self) -> std::ops::Range<usize> {
        let lo = (self.n_radii - self.fit_radii) / 2;
        lo..lo + self.fit_radii
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimEstimate {
    pub value: f64,
    /// Half-width of a 95% interval.
    pub ci_half_width: f64,
    pub method: Method,
    /// Radii spanned by the fitted points (for `Knn`, the range of k-th
    /// neighbour distances).
    pub radius_range: (f64, f64),
    pub n_pairs: Option<u64>,
    pub k: Option<usize>,
    pub n_anchors: Option<usize>,
    pub provenance: Provenance,
}

/// `log C(r)` (correlation) or mean `log mu(B(x, r))` (mass) on the radius
/// grid; `None` where the curve is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCurve {
    pub radii: Vec<f64>,
    pub log_values: Vec<Option<f64>>,
    pub fit_band: (usize, usize),
}

/// Per-block partial sums from which both the curve and its bootstrap
/// replicates are assembled.
struct Blocks {
    /// `sums[b][k]`: pair counts within `r_k` (correlation) or summed log masses (mass).
    sums: Vec<Vec<f64>>,
    /// Pairs (correlation) or anchors (mass) per block.
    weights: Vec<f64>,
    log_of_ratio: bool,
}

impl Blocks {
    fn curve(&self, pick: &[usize], valid: &[bool]) -> Vec<Option<f64>> {
        let n = valid.len();
        let mut s = vec![0.0; n];
        let mut w = 0.0;
        for &b in pick {
            s.iter_mut().zip(&self.sums[b]).for_each(|(a, x)| *a += x);
            w += self.weights[b];
        }
        (0..n)
            .map(|k| {
                if !valid[k] || w == 0.0 {
                    None
                } else if self.log_of_ratio {
                    (s[k] > 0.0).then(|| (s[k] / w).ln())
                } else {
                    Some(s[k] / w)
                }
            })
            .collect()
    }
}

fn fit_slope(
    radii: &[f64],
    curve: &[Option<f64>],
    band: std::ops::Range<usize>,
) -> Option<(f64, (f64, f64))> {
    let pts: Vec<(f64, f64)> = band
        .filter_map(|k| curve[k].map(|y| (radii[k].ln(), y)))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let range = (pts[0].0.exp(), pts[pts.len() - 1].0.exp());
    Some((sxy / sxx, range))
}

fn bootstrap_sd(
    n_blocks: usize,
    n_boot: usize,
    seed: u64,
    stat: impl Fn(&[usize]) -> Option<f64>,
) -> Result<f64> {
    let mut r = rng::stream(rng::derive_seed(seed, TAG_BOOTSTRAP), 0);
    let mut pick = vec![0; n_blocks];
    let mut vals = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        pick.iter_mut().for_each(|p| *p = r.gen_range(0..n_blocks));
        if let Some(v) = stat(&pick) {
            vals.push(v);
        }
    }
    if vals.len() < 2 {
        return Err(Error::InsufficientData(
            "bootstrap replicates could not be fitted; add points or widen the band".into(),
        ));
    }
    let m = vals.iter().sum::<f64>() / vals.len() as f64;
    Ok((vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (vals.len() - 1) as f64).sqrt())
}

/// Local dimension of the sampled measure. A cloud with zero diameter is an
/// atom and has dimension 0.
pub fn local_dimension(cloud: &PointCloud, config: &EstimatorConfig) -> Result<DimEstimate> {
    config.validate()?;
    let provenance = Provenance::new(
        match config.method {
            Method::Correlation => "correlation_integral",
            Method::Knn => "knn_mle",
            Method::Mass => "mean_log_mass",
        },
        &(cloud.provenance(), config),
    );
    let diameter = cloud.diameter();
    if diameter == 0.0 {
        return Ok(DimEstimate {
            value: 0.0,
            ci_half_width: 0.0,
            method: config.method,
            radius_range: (0.0, 0.0),
            n_pairs: None,
            k: None,
            n_anchors: None,
            provenance,
        });
    }
    let mut est = match config.method {
        Method::Knn => knn_estimate(cloud, config)?,
        Method::Correlation | Method::Mass => {
            let radii = config.radii(diameter);
            let (blocks, valid, n_pairs, n_anchors) = if config.method == Method::Correlation {
                let (b, v, p) = correlation_blocks(cloud, config, &radii)?;
                (b, v, Some(p), None)
            } else {
                let (b, v, a) = mass_blocks(cloud, config, &radii)?;
                (b, v, None, Some(a))
            };
            let all: Vec<usize> = (0..config.n_blocks).collect();
            let curve = blocks.curve(&all, &valid);
            let (slope, range) = fit_slope(&radii, &curve, config.fit_band()).ok_or_else(|| {
                Error::InsufficientData(
                    "fewer than 3 usable radii in the fit band; widen the band or add points"
                        .into(),
                )
            })?;
            let sd = bootstrap_sd(config.n_blocks, config.n_bootstrap, config.seed, |pick| {
                fit_slope(&radii, &blocks.curve(pick, &valid), config.fit_band()).map(|f| f.0)
            })?;
            DimEstimate {
                value: slope,
                ci_half_width: 1.96 * sd,
                method: config.method,
                radius_range: range,
                n_pairs,
                k: None,
                n_anchors,
                provenance: provenance.clone(),
            }
        }
    };
    est.value = est.value.max(0.0);
    est.provenance = provenance;
    Ok(est)
}

/// The curve whose slope [`local_dimension`] fits (correlation and mass methods).
pub fn scaling_curve(cloud: &PointCloud, config: &EstimatorConfig) -> Result<ScalingCurve> {
    config.validate()?;
    let radii = config.radii(cloud.diameter());
    let (blocks, valid) = match config.method {
        Method::Correlation => {
            let (b, v, _) = correlation_blocks(cloud, config, &radii)?;
            (b, v)
        }
        Method::Mass => {
            let (b, v, _) = mass_blocks(cloud, config, &radii)?;
            (b, v)
        }
        Method::Knn => {
            return Err(Error::invalid(
                "method",
                "the knn method has no scaling curve",
            ))
        }
    };
    let all: Vec<usize> = (0..config.n_blocks).collect();
    let band = config.fit_band();
    Ok(ScalingCurve {
        log_values: blocks.curve(&all, &valid),
        radii,
        fit_band: (band.start, band.end),
    })
}

fn count_pair(a: &[f64], b: &[f64], r2: &[f64], hist: &mut [f64]) {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let first = r2.partition_point(|&r| r < d2);
    if first < hist.len() {
        hist[first] += 1.0;
    }
}

fn correlation_blocks(
    cloud: &PointCloud,
    config: &EstimatorConfig,
    radii: &[f64],
) -> Result<(Blocks, Vec<bool>, u64)> {
    let n = cloud.len() as u64;
    let total = n * n.saturating_sub(1) / 2;
    if total == 0 {
        return Err(Error::InsufficientData(
            "a single point has no pairs".into(),
        ));
    }
    let r2: Vec<f64> = radii.iter().map(|r| r * r).collect();
    let nb = config.n_blocks;
    let exhaustive = total <= config.pair_budget;
    let seed = rng::derive_seed(config.seed, TAG_PAIRS);
    let per_block: Vec<(Vec<f64>, f64)> = (0..nb)
        .into_par_iter()
        .map(|b| {
            let mut hist = vec![0.0; radii.len()];
            let mut pairs = 0u64;
            if exhaustive {
                for i in (b..cloud.len()).step_by(nb) {
                    for j in i + 1..cloud.len() {
                        count_pair(cloud.point(i), cloud.point(j), &r2, &mut hist);
                    }
                    pairs += n - 1 - i as u64;
                }
            } else {
                let quota = config.pair_budget / nb as u64
                    + u64::from((b as u64) < config.pair_budget % nb as u64);
                let mut r = rng::stream(seed, b as u64);
                for _ in 0..quota {
                    let i = r.gen_range(0..cloud.len());
                    let mut j = r.gen_range(0..cloud.len() - 1);
                    if j >= i {
                        j += 1;
                    }
                    count_pair(cloud.point(i), cloud.point(j), &r2, &mut hist);
                }
                pairs = quota;
            }
            for k in 1..hist.len() {
                hist[k] += hist[k - 1];
            }
            (hist, pairs as f64)
        })
        .collect();
    let within: f64 = per_block.iter().map(|(h, _)| h[radii.len() - 1]).sum();
    if within < MIN_PAIRS as f64 {
        return Err(Error::InsufficientData(format!(
            "only {within} sampled pairs lie within r_max = {:e}; at least {MIN_PAIRS} are needed",
            radii[radii.len() - 1]
        )));
    }
    let n_pairs = per_block.iter().map(|(_, p)| *p as u64).sum();
    let (sums, weights) = per_block.into_iter().unzip();
    let valid = vec![true; radii.len()];
    Ok((
        Blocks {
            sums,
            weights,
            log_of_ratio: true,
        },
        valid,
        n_pairs,
    ))
}

fn anchors(n: usize, wanted: usize, seed: u64) -> Vec<usize> {
    if n <= wanted {
        return (0..n).collect();
    }
    let mut r = rng::stream(rng::derive_seed(seed, TAG_ANCHORS), 0);
    (0..wanted).map(|_| r.gen_range(0..n)).collect()
}

fn mass_blocks(
    cloud: &PointCloud,
    config: &EstimatorConfig,
    radii: &[f64],
) -> Result<(Blocks, Vec<bool>, usize)> {
    let n = cloud.len();
    if n < 2 {
        return Err(Error::InsufficientData(
            "a single point has no neighbours".into(),
        ));
    }
    let tree = KdTree::new(cloud.points(), cloud.dim());
    let idx = anchors(n, config.n_anchors, config.seed);
    let counts: Vec<Vec<usize>> = idx
        .par_iter()
        .map(|&i| tree.count_within(cloud.point(i), radii))
        .collect();
    let last = radii.len() - 1;
    let within: usize = counts.iter().map(|c| c[last] - 1).sum();
    if within < MIN_PAIRS as usize {
        return Err(Error::InsufficientData(format!(
            "only {within} anchor-neighbour pairs lie within r_max = {:e}; at least {MIN_PAIRS} are needed",
            radii[last]
        )));
    }
    // log counts are badly biased when neighbours are few
    let valid: Vec<bool> = (0..radii.len())
        .map(|k| {
            let mut ks: Vec<usize> = counts.iter().map(|c| c[k] - 1).collect();
            let mid = ks.len() / 2;
            let median = *ks.select_nth_unstable(mid).1;
            median >= MIN_MEDIAN_NEIGHBOURS && ks.iter().all(|&c| c > 0)
        })
        .collect();
    let nb = config.n_blocks;
    let mut sums = vec![vec![0.0; radii.len()]; nb];
    let mut weights = vec![0.0; nb];
    let denom = (n - 1) as f64;
    for (a, c) in counts.iter().enumerate() {
        let b = a % nb;
        weights[b] += 1.0;
        for k in 0..radii.len() {
            if valid[k] {
                sums[b][k] += ((c[k] - 1) as f64 / denom).ln();
            }
        }
    }
    Ok((
        Blocks {
            sums,
            weights,
            log_of_ratio: false,
        },
        valid,
        idx.len(),
    ))
}

fn knn_estimate(cloud: &PointCloud, config: &EstimatorConfig) -> Result<DimEstimate> {
    let n = cloud.len();
    let k = config.k;
    if n <= k {
        return Err(Error::InsufficientData(format!(
            "{n} points cannot supply {k} neighbours each"
        )));
    }
    let tree = KdTree::new(cloud.points(), cloud.dim());
    let idx = anchors(n, config.n_anchors, config.seed);
    // per anchor: mean of log(T_k / T_j), the inverse of its local estimate
    let per: Vec<Option<(f64, f64)>> = idx
        .par_iter()
        .map(|&i| {
            let t = tree.nearest(cloud.point(i), k, Some(i));
            let tk = t[k - 1];
            if t[0] == 0.0 {
                return None;
            }
            let inv = t[..k - 1].iter().map(|tj| (tk / tj).ln()).sum::<f64>() / (k - 1) as f64;
            Some((inv, tk))
        })
        .collect();
    let used: Vec<(usize, f64, f64)> = per
        .iter()
        .enumerate()
        .filter_map(|(a, p)| p.map(|(inv, tk)| (a, inv, tk)))
        .collect();
    let base = DimEstimate {
        value: 0.0,
        ci_half_width: 0.0,
        method: Method::Knn,
        radius_range: (0.0, 0.0),
        n_pairs: None,
        k: Some(k),
        n_anchors: Some(used.len()),
        provenance: Provenance::new("knn_mle", &()),
    };
    if 2 * used.len() <= idx.len() {
        // most anchors sit on repeated points: the measure is atomic at this resolution
        return Ok(base);
    }
    let nb = config.n_blocks;
    let mut sums = vec![0.0; nb];
    let mut counts = vec![0.0; nb];
    for &(a, inv, _) in &used {
        sums[a % nb] += inv;
        counts[a % nb] += 1.0;
    }
    let stat = |pick: &[usize]| {
        let s: f64 = pick.iter().map(|&b| sums[b]).sum();
        let c: f64 = pick.iter().map(|&b| counts[b]).sum();
        (s > 0.0).then(|| c / s)
    };
    let all: Vec<usize> = (0..nb).collect();
    let value = stat(&all).unwrap_or(0.0);
    let sd = bootstrap_sd(nb, config.n_bootstrap, config.seed, stat)?;
    let tks = used.iter().map(|u| u.2);
    Ok(DimEstimate {
        value,
        ci_half_width: 1.96 * sd,
        radius_range: (
            tks.clone().fold(f64::INFINITY, f64::min),
            tks.fold(0.0, f64::max),
        ),
        ..base
    })
}
