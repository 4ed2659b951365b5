//! Numerical multiplicative ergodic theory for the matrix cocycle generated by
//! the linear parts of an IFS over a shift-invariant measure.
//!
//! Exponents are estimated from random words: the top one from renormalized
//! products, the whole spectrum from the QR (Benettin) recursion. The
//! Oseledets filtration `V^1 ⊃ .. ⊃ V^{s-1}` at a point is read off the right
//! singular vectors of the backward product `M_{x_{-n}} .. M_{x_{-1}}`; the
//! complementary fast directions come from the left singular vectors of the
//! forward product `M_{x_0} .. M_{x_{n-1}}`. For non-invertible matrices the
//! forward construction is only a heuristic for the Oseledets splitting.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::measure::ShiftMeasure;
use crate::rng;
use crate::word::Word;

const RENORM_EVERY: usize = 16;
/// `|R_ii|` below this fraction of `||M||` counts as an underflow step.
const UNDERFLOW_REL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSpectrum {
    /// Distinct exponents, strictly decreasing; `-inf` allowed.
    #[serde(with = "crate::sentinel::vec")]
    pub exponents: Vec<f64>,
    pub multiplicities: Vec<usize>,
    pub stderr: Vec<f64>,
    pub gap_tol: f64,
    /// The `d` ungrouped exponents in decreasing order.
    #[serde(with = "crate::sentinel::vec")]
    pub raw: Vec<f64>,
    pub raw_stderr: Vec<f64>,
    /// Set when an adjacent gap falls in `[gap_tol, 2 gap_tol)`.
    pub ambiguous_grouping: bool,
}

impl LyapunovSpectrum {
    /// A spectrum known in closed form (zero standard error).
    pub fn exact(exponents: Vec<f64>, multiplicities: Vec<usize>) -> Result<Self> {
        if exponents.is_empty() || exponents.len() != multiplicities.len() {
            return Err(Error::invalid(
                "spectrum",
                "exponents and multiplicities must be nonempty and of equal length",
            ));
        }
        if multiplicities.contains(&0) {
            return Err(Error::invalid(
                "spectrum.multiplicities",
                "multiplicities must be positive",
            ));
        }
        if exponents.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(Error::invalid(
                "spectrum.exponents",
                "exponents must be finite or -inf",
            ));
        }
        if exponents.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::invalid(
                "spectrum.exponents",
                "exponents must be strictly decreasing",
            ));
        }
        let raw: Vec<f64> = exponents
            .iter()
            .zip(&multiplicities)
            .flat_map(|(&l, &k)| std::iter::repeat_n(l, k))
            .collect();
        let s = exponents.len();
        Ok(LyapunovSpectrum {
            raw_stderr: vec![0.0; raw.len()],
            raw,
            stderr: vec![0.0; s],
            exponents,
            multiplicities,
            gap_tol: 0.0,
            ambiguous_grouping: false,
        })
    }

    /// Number of distinct exponents `s`.
    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    /// Ambient dimension `d = sum k_i`.
    pub fn dim(&self) -> usize {
        self.multiplicities.iter().sum()
    }

    pub fn top(&self) -> f64 {
        self.exponents[0]
    }

    /// Cumulative dimensions `d_0 = 0, d_i = k_1 + .. + k_i`.
    pub fn cumulative_dims(&self) -> Vec<usize> {
        std::iter::once(0)
            .chain(self.multiplicities.iter().scan(0, |acc, &k| {
                *acc += k;
                Some(*acc)
            }))
            .collect()
    }

    /// `L_0 = 0, L_i = -sum_{l <= i} lambda_l k_l`; `+inf` once an exponent is `-inf`.
    pub fn cumulative_rates(&self) -> Vec<f64> {
        std::iter::once(0.0)
            .chain(
                self.exponents
                    .iter()
                    .zip(&self.multiplicities)
                    .scan(0.0, |acc, (&l, &k)| {
                        *acc += -l * k as f64;
                        Some(*acc)
                    }),
            )
            .collect()
    }
}

/// Estimated filtration at one point of the two-sided shift.
#[derive(Debug, Clone, PartialEq)]
pub struct OseledetsFlag {
    /// `bases[i-1]` spans `V^i`, `i = 1..s-1`, with `d - d_i` orthonormal columns.
    pub bases: Vec<Matrix>,
    /// `x_{-n} .. x_{-1}` in chronological order.
    pub past_word: Word,
    pub depth: usize,
    /// Singular-value ratio at some cut fell below `exp(n gap_tol / 2)`.
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleReport {
    pub samples: Vec<f64>,
    pub min: f64,
    pub median: f64,
}

fn check_mats(mats: &[Matrix], mu: &ShiftMeasure) -> Result<usize> {
    let Some(first) = mats.first() else {
        return Err(Error::invalid("matrices", "no matrices"));
    };
    let d = first.nrows();
    if mats.iter().any(|m| m.nrows() != d || m.ncols() != d) {
        return Err(Error::invalid(
            "matrices",
            "matrices must be square with a common dimension",
        ));
    }
    if mu.alphabet_size() != mats.len() {
        return Err(Error::invalid(
            "measure",
            format!(
                "measure alphabet has {} symbols but there are {} matrices",
                mu.alphabet_size(),
                mats.len()
            ),
        ));
    }
    Ok(d)
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.contains(&f64::NEG_INFINITY) {
        return (f64::NEG_INFINITY, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `(1/n) log ||M_{x_0} .. M_{x_{n-1}}||` along one word.
fn log_norm_growth(mats: &[Matrix], word: &[usize]) -> f64 {
    let d = mats[0].nrows();
    let mut p = Matrix::identity(d, d);
    let mut tmp = Matrix::zeros(d, d);
    let mut log_acc = 0.0;
    for (k, &j) in word.iter().enumerate() {
        p.mul_to(&mats[j], &mut tmp);
        std::mem::swap(&mut p, &mut tmp);
        if (k + 1) % RENORM_EVERY == 0 || k + 1 == word.len() {
            let scale = p.amax();
            if scale == 0.0 {
                return f64::NEG_INFINITY;
            }
            log_acc += scale.ln();
            p /= scale;
        }
    }
    (log_acc + linalg::op_norm(&p).ln()) / word.len() as f64
}

pub(crate) fn top_exponent_unchecked(
    mats: &[Matrix],
    mu: &ShiftMeasure,
    n_steps: usize,
    n_reps: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_mats(mats, mu)?;
    if n_reps == 0 {
        return Err(Error::Precondition("n_reps must be at least 1".into()));
    }
    let sampler = mu.sampler();
    let reps: Vec<f64> = (0..n_reps as u64)
        .into_par_iter()
        .map(|r| {
            let mut word = vec![0; n_steps];
            sampler.fill(&mut word, &mut rng::stream(seed, r));
            log_norm_growth(mats, &word)
        })
        .collect();
    Ok(mean_stderr(&reps))
}

/// Top Lyapunov exponent with its standard error over repetitions.
pub fn top_exponent(
    mats: &[Matrix],
    mu: &ShiftMeasure,
    n_steps: usize,
    n_reps: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_steps < 1000 {
        return Err(Error::Precondition(format!(
            "n_steps must be at least 1000, got {n_steps}"
        )));
    }
    top_exponent_unchecked(mats, mu, n_steps, n_reps, seed)
}

/// `(1/n) log |det(M_{x_0} .. M_{x_{n-1}})|` averaged over repetitions, with
/// its standard error. Equals the sum of all exponents counted with
/// multiplicity.
pub fn log_det_average(
    mats: &[Matrix],
    mu: &ShiftMeasure,
    n_steps: usize,
    n_reps: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_mats(mats, mu)?;
    if n_steps == 0 || n_reps == 0 {
        return Err(Error::Precondition(
            "n_steps and n_reps must be positive".into(),
        ));
    }
    let log_dets: Vec<f64> = mats.iter().map(|m| m.determinant().abs().ln()).collect();
    let sampler = mu.sampler();
    let reps: Vec<f64> = (0..n_reps as u64)
        .into_par_iter()
        .map(|r| {
            let mut word = vec![0; n_steps];
            sampler.fill(&mut word, &mut rng::stream(seed, r));
            word.iter().map(|&j| log_dets[j]).sum::<f64>() / n_steps as f64
        })
        .collect();
    Ok(mean_stderr(&reps))
}

/// QR recursion on `M_{x_k}^T` so that the accumulated triangular factors
/// describe the forward product `M_{x_0} .. M_{x_{n-1}}`.
fn raw_exponents(mats: &[Matrix], word: &[usize]) -> Vec<f64> {
    let d = mats[0].nrows();
    let transposed: Vec<Matrix> = mats.iter().map(|m| m.transpose()).collect();
    let scales: Vec<f64> = mats.iter().map(|m| m.norm()).collect();
    let mut q = Matrix::identity(d, d);
    let mut a = Matrix::zeros(d, d);
    let mut sums = vec![0.0; d];
    let mut underflows = vec![0usize; d];
    let mut dead = vec![false; d];
    for &j in word {
        transposed[j].mul_to(&q, &mut a);
        let qr = a.clone().qr();
        let r = qr.r();
        q = qr.q();
        let threshold = UNDERFLOW_REL * scales[j];
        for i in 0..d {
            let rii = r[(i, i)].abs();
            if rii == 0.0 {
                dead[i] = true;
            } else {
                if rii <= threshold {
                    underflows[i] += 1;
                }
                sums[i] += rii.ln();
            }
        }
    }
    let n = word.len() as f64;
    let mut out: Vec<f64> = (0..d)
        .map(|i| {
            if dead[i] || underflows[i] * 2 > word.len() {
                f64::NEG_INFINITY
            } else {
                sums[i] / n
            }
        })
        .collect();
    // a vanished i-volume kills every lower exponent too
    if let Some(first) = out.iter().position(|x| *x == f64::NEG_INFINITY) {
        out[first..].iter_mut().for_each(|x| *x = f64::NEG_INFINITY);
    }
    out
}

/// Default grouping tolerance `max(0.05 |lambda_1|, 1e-3)`.
pub fn default_gap_tol(top: f64) -> f64 {
    if top.is_finite() {
        (0.05 * top.abs()).max(1e-3)
    } else {
        1e-3
    }
}

/// Group sorted raw exponents whose adjacent gaps are below `gap_tol`.
pub fn group_exponents(raw: &[f64], raw_stderr: &[f64], gap_tol: f64) -> LyapunovSpectrum {
    let mut exponents = Vec::new();
    let mut multiplicities = Vec::new();
    let mut stderr = Vec::new();
    let mut ambiguous = false;
    let mut start = 0;
    for i in 1..=raw.len() {
        let split = if i == raw.len() {
            true
        } else {
            let (a, b) = (raw[i - 1], raw[i]);
            if a == f64::NEG_INFINITY && b == f64::NEG_INFINITY {
                false
            } else {
                let gap = a - b;
                if gap >= gap_tol && gap < 2.0 * gap_tol {
                    ambiguous = true;
                }
                gap >= gap_tol
            }
        };
        if split {
            let members = &raw[start..i];
            let value = if members[0] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                members.iter().sum::<f64>() / members.len() as f64
            };
            exponents.push(value);
            multiplicities.push(members.len());
            stderr.push(raw_stderr[start..i].iter().copied().fold(0.0, f64::max));
            start = i;
        }
    }
    LyapunovSpectrum {
        exponents,
        multiplicities,
        stderr,
        gap_tol,
        raw: raw.to_vec(),
        raw_stderr: raw_stderr.to_vec(),
        ambiguous_grouping: ambiguous,
    }
}

/// Full Lyapunov spectrum with multiplicities. `gap_tol = None` uses
/// [`default_gap_tol`].
pub fn spectrum(
    mats: &[Matrix],
    mu: &ShiftMeasure,
    n_steps: usize,
    n_reps: usize,
    gap_tol: Option<f64>,
    seed: u64,
) -> Result<LyapunovSpectrum> {
    let d = check_mats(mats, mu)?;
    if n_steps < 1000 {
        return Err(Error::Precondition(format!(
            "n_steps must be at least 1000, got {n_steps}"
        )));
    }
    if n_reps == 0 {
        return Err(Error::Precondition("n_reps must be at least 1".into()));
    }
    if let Some(t) = gap_tol {
        if !(t > 0.0) {
            return Err(Error::Precondition(format!(
                "gap_tol must be positive, got {t}"
            )));
        }
    }
    let sampler = mu.sampler();
    let reps: Vec<Vec<f64>> = (0..n_reps as u64)
        .into_par_iter()
        .map(|r| {
            let mut word = vec![0; n_steps];
            sampler.fill(&mut word, &mut rng::stream(seed, r));
            let mut e = raw_exponents(mats, &word);
            e.sort_by(|a, b| b.total_cmp(a));
            e
        })
        .collect();
    let (raw, raw_stderr): (Vec<f64>, Vec<f64>) = (0..d)
        .map(|i| mean_stderr(&reps.iter().map(|e| e[i]).collect::<Vec<_>>()))
        .unzip();
    if raw[0] == f64::NEG_INFINITY {
        log::warn!("all Lyapunov exponents are -inf: products collapse to zero");
    }
    let tol = gap_tol.unwrap_or_else(|| default_gap_tol(raw[0]));
    let spec = group_exponents(&raw, &raw_stderr, tol);
    if spec.ambiguous_grouping {
        log::warn!(
            "ambiguous exponent grouping at gap_tol {tol}: raw exponents {:?}",
            spec.raw
        );
    }
    Ok(spec)
}

/// Product of the matrices along `word`, left to right, rescaled by powers
/// of its largest entry. Only directions are meaningful.
fn scaled_product(mats: &[Matrix], word: &[usize]) -> Matrix {
    let d = mats[0].nrows();
    let mut p = Matrix::identity(d, d);
    let mut tmp = Matrix::zeros(d, d);
    for (k, &j) in word.iter().enumerate() {
        p.mul_to(&mats[j], &mut tmp);
        std::mem::swap(&mut p, &mut tmp);
        if (k + 1) % RENORM_EVERY == 0 {
            let s = p.amax();
            if s > 0.0 {
                p /= s;
            }
        }
    }
    p
}

/// SVD with singular values sorted in decreasing order; returns
/// `(sigma, U, V)` with matching column order.
fn sorted_svd(m: &Matrix) -> (Vec<f64>, Matrix, Matrix) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v = svd.v_t.expect("v_t requested").transpose();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    let pick = |m: &Matrix| {
        Matrix::from_columns(
            &order
                .iter()
                .map(|&i| m.column(i).into_owned())
                .collect::<Vec<_>>(),
        )
    };
    (sigma, pick(&u), pick(&v))
}

fn flag_from_past(mats: &[Matrix], past: &[usize], spec: &LyapunovSpectrum) -> (Vec<Matrix>, bool) {
    let d = mats[0].nrows();
    if spec.len() < 2 {
        return (Vec::new(), false);
    }
    let b = scaled_product(mats, past);
    let (sigma, _, v) = sorted_svd(&b);
    let dims = spec.cumulative_dims();
    let n = past.len() as f64;
    let mut low_confidence = false;
    let mut bases = Vec::with_capacity(spec.len() - 1);
    for &cut in &dims[1..spec.len()] {
        let (upper, lower) = (sigma[cut - 1], sigma[cut]);
        let required = (n * spec.gap_tol / 2.0).exp();
        if lower > 0.0 && upper / lower < required {
            low_confidence = true;
        }
        bases.push(v.columns(cut, d - cut).into_owned());
    }
    (bases, low_confidence)
}

/// Estimate `V_x^1 ⊃ .. ⊃ V_x^{s-1}` from the finite past `x_{-n} .. x_{-1}`.
pub fn oseledets_flag(
    mats: &[Matrix],
    past: &Word,
    spec: &LyapunovSpectrum,
) -> Result<OseledetsFlag> {
    if mats.is_empty() {
        return Err(Error::invalid("matrices", "no matrices"));
    }
    past.validate(mats.len())?;
    if past.len() < 50 {
        return Err(Error::Precondition(format!(
            "past depth must be at least 50, got {}",
            past.len()
        )));
    }
    if spec.dim() != mats[0].nrows() {
        return Err(Error::invalid(
            "spectrum",
            "multiplicities do not sum to the matrix dimension",
        ));
    }
    let (bases, low_confidence) = flag_from_past(mats, past.symbols(), spec);
    if low_confidence {
        log::warn!("singular value gap at a flag cut is below the confidence threshold");
    }
    Ok(OseledetsFlag {
        bases,
        past_word: past.clone(),
        depth: past.len(),
        low_confidence,
    })
}

/// Smallest principal sine between the estimated slow blocks `V^i` (from the
/// past) and fast blocks `E^1 ⊕ .. ⊕ E^i` (from the future) of one point.
fn splitting_sine(
    mats: &[Matrix],
    past: &[usize],
    future: &[usize],
    spec: &LyapunovSpectrum,
) -> f64 {
    let (bases, _) = flag_from_past(mats, past, spec);
    let f = scaled_product(mats, future);
    let (_, u, _) = sorted_svd(&f);
    let dims = spec.cumulative_dims();
    bases
        .iter()
        .zip(&dims[1..])
        .map(|(slow, &cut)| linalg::min_principal_sine(&u.columns(0, cut).into_owned(), slow))
        .fold(1.0, f64::min)
        .max(f64::MIN_POSITIVE)
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Angle diagnostics between complementary Oseledets blocks over independent
/// points.
pub fn angle_stats(
    mats: &[Matrix],
    mu: &ShiftMeasure,
    spec: &LyapunovSpectrum,
    n_samples: usize,
    past_depth: usize,
    seed: u64,
) -> Result<AngleReport> {
    check_mats(mats, mu)?;
    if spec.len() < 2 {
        return Err(Error::Precondition(
            "angle statistics need at least two distinct exponents".into(),
        ));
    }
    if n_samples == 0 || past_depth < 50 {
        return Err(Error::Precondition(
            "need n_samples >= 1 and past_depth >= 50".into(),
        ));
    }
    let sampler = mu.sampler();
    let samples: Vec<f64> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut w = vec![0; 2 * past_depth];
            sampler.fill(&mut w, &mut rng::stream(seed, i));
            splitting_sine(mats, &w[..past_depth], &w[past_depth..], spec)
        })
        .collect();
    Ok(AngleReport {
        min: samples.iter().copied().fold(f64::INFINITY, f64::min),
        median: median(&samples),
        samples,
    })
}

/// `sin theta(sigma^n x)` for each requested shift `n` along one sampled orbit.
pub fn angle_along_orbit(
    mats: &[Matrix],
    mu: &ShiftMeasure,
    spec: &LyapunovSpectrum,
    past_depth: usize,
    shifts: &[usize],
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    check_mats(mats, mu)?;
    if spec.len() < 2 {
        return Err(Error::Precondition(
            "angle statistics need at least two distinct exponents".into(),
        ));
    }
    let max_shift = shifts.iter().copied().max().unwrap_or(0);
    let mut w = vec![0; 2 * past_depth + max_shift];
    mu.sampler().fill(&mut w, &mut rng::stream(seed, 0));
    Ok(shifts
        .par_iter()
        .map(|&n| {
            let origin = past_depth + n;
            (
                n,
                splitting_sine(mats, &w[n..origin], &w[origin..origin + past_depth], spec),
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn diag(a: f64, b: f64) -> Matrix {
        Matrix::from_row_slice(2, 2, &[a, 0.0, 0.0, b])
    }

    fn diag_pair() -> Vec<Matrix> {
        vec![diag(0.5, 0.25), diag(1.0 / 3.0, 0.2)]
    }

    #[test]
    fn conformal_top_exponent_is_exact() {
        let mats = vec![linalg::rotation2(0.7) * 0.4, linalg::rotation2(-1.3) * 0.4];
        let (l, _) = top_exponent(&mats, &ShiftMeasure::uniform(2), 2000, 5, 3).unwrap();
        assert_relative_eq!(l, 0.4f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn parabolic_top_exponent_vanishes() {
        let mats = vec![Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0])];
        let n = 1000;
        let (l, _) = top_exponent(&mats, &ShiftMeasure::uniform(1), n, 1, 0).unwrap();
        assert!(l.abs() <= 2.0 / n as f64 * (n as f64).ln());
    }

    #[test]
    fn diagonal_top_exponent() {
        let (l, se) = top_exponent(&diag_pair(), &ShiftMeasure::uniform(2), 20_000, 16, 5).unwrap();
        assert!((l + 0.5 * 6f64.ln()).abs() < 4.0 * se + 1e-4, "{l} ± {se}");
    }

    #[test]
    fn spectrum_of_fixed_diagonal() {
        let s = spectrum(
            &[diag(0.5, 0.25)],
            &ShiftMeasure::uniform(1),
            1000,
            2,
            None,
            0,
        )
        .unwrap();
        assert_eq!(s.multiplicities, vec![1, 1]);
        assert_relative_eq!(s.exponents[0], 0.5f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(s.exponents[1], 0.25f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn conformal_spectrum_groups() {
        let mats = vec![linalg::rotation2(0.3) / 3.0, linalg::rotation2(2.0) / 3.0];
        let s = spectrum(&mats, &ShiftMeasure::uniform(2), 2000, 4, None, 0).unwrap();
        assert_eq!(s.multiplicities, vec![2]);
        assert_relative_eq!(s.exponents[0], (1.0f64 / 3.0).ln(), epsilon = 1e-10);
    }

    #[test]
    fn diagonal_pair_spectrum() {
        let s = spectrum(&diag_pair(), &ShiftMeasure::uniform(2), 20_000, 8, None, 1).unwrap();
        assert_eq!(s.multiplicities, vec![1, 1]);
        assert!((s.exponents[0] + 0.5 * 6f64.ln()).abs() < 0.01);
        assert!((s.exponents[1] + 0.5 * 20f64.ln()).abs() < 0.01);
    }

    #[test]
    fn rank_deficiency_gives_negative_infinity() {
        let mats = vec![diag(0.5, 0.0), diag(0.3, 0.0)];
        let s = spectrum(&mats, &ShiftMeasure::uniform(2), 1000, 2, None, 0).unwrap();
        assert_eq!(s.multiplicities, vec![1, 1]);
        assert_eq!(s.exponents[1], f64::NEG_INFINITY);
        let singular = vec![Matrix::from_row_slice(2, 2, &[0.25, 0.25, 0.25, 0.25])];
        let s = spectrum(&singular, &ShiftMeasure::uniform(1), 1000, 1, None, 0).unwrap();
        assert_eq!(s.raw[1], f64::NEG_INFINITY);
        assert!((s.raw[0] - 0.5f64.ln()).abs() < 1e-3);
    }

    #[test]
    fn grouping_flags_ambiguous_gaps() {
        let s = group_exponents(&[-1.0, -1.015, -2.0], &[0.0; 3], 0.01);
        assert_eq!(s.multiplicities, vec![1, 1, 1]);
        assert!(s.ambiguous_grouping);
        let s = group_exponents(
            &[-1.0, -1.005, -2.0, f64::NEG_INFINITY, f64::NEG_INFINITY],
            &[0.0; 5],
            0.01,
        );
        assert_eq!(s.multiplicities, vec![2, 1, 2]);
        assert!(!s.ambiguous_grouping);
        assert_eq!(s.exponents[2], f64::NEG_INFINITY);
    }

    #[test]
    fn cumulative_quantities() {
        let s =
            LyapunovSpectrum::exact(vec![-1.0, -2.0, f64::NEG_INFINITY], vec![1, 2, 1]).unwrap();
        assert_eq!(s.cumulative_dims(), vec![0, 1, 3, 4]);
        assert_eq!(s.cumulative_rates()[..3], [0.0, 1.0, 5.0]);
        assert_eq!(s.cumulative_rates()[3], f64::INFINITY);
        assert!(LyapunovSpectrum::exact(vec![-2.0, -1.0], vec![1, 1]).is_err());
    }

    #[test]
    fn diagonal_flag_is_the_slow_axis() {
        let spec =
            LyapunovSpectrum::exact(vec![-(6f64.ln()) / 2.0, -(20f64.ln()) / 2.0], vec![1, 1])
                .unwrap();
        let past = ShiftMeasure::uniform(2)
            .sample_word(80, &mut rng::stream(2, 0))
            .unwrap();
        let flag = oseledets_flag(&diag_pair(), &past, &spec).unwrap();
        let e2 = Matrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert!(linalg::max_principal_sine(&flag.bases[0], &e2) < 1e-14);
    }

    #[test]
    fn triangular_flag_matches_eigenvector() {
        let a = Matrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 0.125]);
        let spec = LyapunovSpectrum::exact(vec![0.5f64.ln(), 0.125f64.ln()], vec![1, 1]).unwrap();
        let flag = oseledets_flag(&[a], &Word::repeat(0, 60), &spec).unwrap();
        let v = linalg::orthonormalize(&Matrix::from_column_slice(2, 1, &[-8.0 / 3.0, 1.0]));
        assert!(linalg::max_principal_sine(&flag.bases[0], &v) < 1e-10);
        assert!(!flag.low_confidence);
        assert!(linalg::orthonormality_defect(&flag.bases[0]) < 1e-10);
    }

    #[test]
    fn flag_rejects_short_pasts() {
        let spec = LyapunovSpectrum::exact(vec![-1.0, -2.0], vec![1, 1]).unwrap();
        assert!(matches!(
            oseledets_flag(&diag_pair(), &Word::repeat(0, 10), &spec),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn nested_flag_in_three_dimensions() {
        let m0 = Matrix::from_row_slice(3, 3, &[0.6, 0.1, 0.0, 0.0, 0.3, 0.05, 0.0, 0.0, 0.1]);
        let m1 = Matrix::from_row_slice(3, 3, &[0.5, -0.1, 0.02, 0.0, 0.25, 0.1, 0.0, 0.0, 0.12]);
        let mats = vec![m0, m1];
        let mu = ShiftMeasure::uniform(2);
        let spec = spectrum(&mats, &mu, 5000, 4, None, 0).unwrap();
        assert_eq!(spec.multiplicities, vec![1, 1, 1]);
        let past = mu.sample_word(100, &mut rng::stream(4, 0)).unwrap();
        let flag = oseledets_flag(&mats, &past, &spec).unwrap();
        assert_eq!(flag.bases.len(), 2);
        assert_eq!((flag.bases[0].ncols(), flag.bases[1].ncols()), (2, 1));
        for b in &flag.bases {
            assert!(linalg::orthonormality_defect(b) < 1e-10);
        }
        // V^2 ⊂ V^1
        let inner = &flag.bases[1];
        let outer = &flag.bases[0];
        let residual = inner - outer * (outer.transpose() * inner);
        assert!(residual.amax() < 1e-6);
    }

    #[test]
    fn diagonal_angles_are_right_angles() {
        let spec =
            LyapunovSpectrum::exact(vec![-(6f64.ln()) / 2.0, -(20f64.ln()) / 2.0], vec![1, 1])
                .unwrap();
        let rep = angle_stats(&diag_pair(), &ShiftMeasure::uniform(2), &spec, 8, 60, 0).unwrap();
        assert!(rep.samples.iter().all(|s| (s - 1.0).abs() < 1e-12));
    }

    #[test]
    fn angle_stats_need_two_exponents() {
        let spec = LyapunovSpectrum::exact(vec![-1.0], vec![2]).unwrap();
        assert!(angle_stats(&diag_pair(), &ShiftMeasure::uniform(2), &spec, 8, 60, 0).is_err());
    }

    #[test]
    fn rotated_family_angles_decay_subexponentially() {
        let r = linalg::rotation2(10f64.to_radians());
        let d = diag(0.5, 0.25);
        let mats = vec![d.clone(), &r * &d * r.transpose()];
        let mu = ShiftMeasure::uniform(2);
        let spec = spectrum(&mats, &mu, 20_000, 4, None, 7).unwrap();
        assert_eq!(spec.len(), 2);
        let rep = angle_stats(&mats, &mu, &spec, 32, 100, 1).unwrap();
        assert!(rep.min > 0.0 && rep.min <= 1.0);
        let shifts: Vec<usize> = (500..=1000).step_by(50).collect();
        let orbit = angle_along_orbit(&mats, &mu, &spec, 100, &shifts, 3).unwrap();
        for (n, s) in orbit {
            assert!((s.ln() / n as f64).abs() < 0.01, "n={n} sin={s}");
        }
    }

    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn spectrum_is_invariant_under_orthogonal_conjugation(
            e in prop::array::uniform4(-0.6f64..0.6),
            f in prop::array::uniform4(-0.6f64..0.6),
            theta in 0.0f64..6.3,
        ) {
            let mats = vec![Matrix::from_row_slice(2, 2, &e), Matrix::from_row_slice(2, 2, &f)];
            prop_assume!(mats.iter().all(|m| m.determinant().abs() > 1e-3));
            let q = linalg::rotation2(theta);
            let conj: Vec<Matrix> = mats.iter().map(|m| &q * m * q.transpose()).collect();
            let mu = ShiftMeasure::uniform(2);
            let a = spectrum(&mats, &mu, 4000, 2, None, 9).unwrap();
            let b = spectrum(&conj, &mu, 4000, 2, None, 9).unwrap();
            for (x, y) in a.raw.iter().zip(&b.raw) {
                // same word sequence, so only the initial frame differs
                prop_assert!((x - y).abs() < 5e-3, "{:?} vs {:?}", a.raw, b.raw);
            }
        }

        #[test]
        fn exponents_sum_to_the_log_determinant(
            e in prop::array::uniform4(-0.6f64..0.6),
            f in prop::array::uniform4(-0.6f64..0.6),
        ) {
            let mats = vec![Matrix::from_row_slice(2, 2, &e), Matrix::from_row_slice(2, 2, &f)];
            prop_assume!(mats.iter().all(|m| m.determinant().abs() > 1e-3));
            let s = spectrum(&mats, &ShiftMeasure::uniform(2), 4000, 2, None, 3).unwrap();
            let (avg, _) = log_det_average(&mats, &ShiftMeasure::uniform(2), 4000, 2, 3).unwrap();
            prop_assert!((s.raw.iter().sum::<f64>() - avg).abs() < 1e-9, "{:?} vs {avg}", s.raw);
        }
    }
}
