//! Singular value function, level-n sub-additive pressure and the affinity
//! dimension.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DimKind, DimValue};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::provenance::Provenance;

/// Largest number of level-n words enumerated by [`pressure`].
pub const WORD_BUDGET: usize = 10_000_000;

/// `log phi^s` from singular values sorted in decreasing order.
fn log_svf(log_sv: &[f64], s: f64) -> f64 {
    let d = log_sv.len();
    if s <= 0.0 {
        return 0.0;
    }
    if s > d as f64 {
        let total: f64 = log_sv.iter().sum();
        return total * s / d as f64;
    }
    let m = s.floor() as usize;
    let frac = s - m as f64;
    let mut acc: f64 = log_sv[..m].iter().sum();
    if frac > 0.0 {
        acc += frac * log_sv[m];
    }
    acc
}

/// Singular value function `alpha_1 .. alpha_m alpha_{m+1}^{s-m}` with
/// `m = floor(s)`, extended by `(alpha_1 .. alpha_d)^{s/d}` for `s > d`.
pub fn singular_value_function(a: &Matrix, s: f64) -> f64 {
    let log_sv: Vec<f64> = linalg::singular_values(a).iter().map(|x| x.ln()).collect();
    log_svf(&log_sv, s).exp()
}

/// Log singular values of every product `M_{i_1} .. M_{i_n}`.
#[derive(Debug, Clone)]
pub struct SingularValueTable {
    level: usize,
    dim: usize,
    log_sv: Vec<f64>,
}

fn enumerate_branch(mats: &[Matrix], prefix: &Matrix, remaining: usize, out: &mut Vec<f64>) {
    if remaining == 0 {
        out.extend(linalg::singular_values(prefix).iter().map(|x| x.ln()));
        return;
    }
    for m in mats {
        enumerate_branch(mats, &(prefix * m), remaining - 1, out);
    }
}

impl SingularValueTable {
    pub fn new(mats: &[Matrix], level: usize) -> Result<Self> {
        if mats.is_empty() || level == 0 {
            return Err(Error::Precondition(
                "need at least one matrix and level >= 1".into(),
            ));
        }
        let words = (mats.len() as f64).powi(level as i32);
        if words > WORD_BUDGET as f64 {
            return Err(Error::Resource(format!(
                "{} words at level {level} exceed the budget of {WORD_BUDGET}; use a smaller level",
                words
            )));
        }
        let dim = mats[0].nrows();
        // one branch per first symbol, concatenated in symbol order
        let log_sv = mats
            .par_iter()
            .map(|m| {
                let mut out = Vec::with_capacity(words as usize / mats.len() * dim);
                enumerate_branch(mats, m, level - 1, &mut out);
                out
            })
            .collect::<Vec<_>>()
            .concat();
        Ok(SingularValueTable { level, dim, log_sv })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    /// `P_n(s) = (1/n) log sum_{|I|=n} phi^s(M_I)`.
    pub fn pressure(&self, s: f64) -> f64 {
        let terms: Vec<f64> = self
            .log_sv
            .chunks(self.dim)
            .map(|sv| log_svf(sv, s))
            .collect();
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
        (max + sum.ln()) / self.level as f64
    }

    /// Zero of `s -> P_n(s)` by bisection to width `tol`.
    pub fn root(&self, tol: f64) -> Result<f64> {
        if self.pressure(0.0) <= 0.0 {
            return Ok(0.0);
        }
        let mut lo = 0.0;
        let mut hi = 2.0 * self.dim as f64;
        while self.pressure(hi) > 0.0 {
            lo = hi;
            hi *= 2.0;
            if hi > 1e6 {
                return Err(Error::Numeric(
                    "pressure stays positive; is the system contracting?".into(),
                ));
            }
        }
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if self.pressure(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Level-n sub-additive pressure of the singular value function.
pub fn pressure(mats: &[Matrix], s: f64, n: usize) -> Result<f64> {
    if s < 0.0 {
        return Err(Error::Precondition(format!(
            "s must be nonnegative, got {s}"
        )));
    }
    Ok(SingularValueTable::new(mats, n)?.pressure(s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityDimension {
    /// Root of `P_n`; an upper estimate of the affinity dimension.
    pub dim: DimValue,
    pub level: usize,
    pub root_at_level: f64,
    pub half_level: usize,
    pub root_at_half_level: f64,
    /// `2 s*_n - s*_{n/2}`, assuming an `O(1/n)` error.
    pub extrapolated: f64,
    /// `|s*_n - s*_{n/2}|`.
    pub level_gap: f64,
}

/// Affinity dimension from the level-`n` and level-`n/2` pressures.
pub fn affinity_dimension(mats: &[Matrix], n: usize, tol: f64) -> Result<AffinityDimension> {
    if let Some(j) = mats.iter().position(|m| linalg::op_norm(m) >= 1.0) {
        return Err(Error::Precondition(format!(
            "matrix {j} has operator norm >= 1"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::Precondition("tol must be positive".into()));
    }
    let d = mats.first().map_or(0, Matrix::nrows);
    let half = (n / 2).max(1);
    let root_n = SingularValueTable::new(mats, n)?.root(tol)?;
    let root_half = if half == n {
        root_n
    } else {
        SingularValueTable::new(mats, half)?.root(tol)?
    };
    let rows: Vec<Vec<Vec<f64>>> = mats.iter().map(linalg::to_rows).collect();
    Ok(AffinityDimension {
        dim: DimValue {
            value: root_n,
            capped: root_n.min(d as f64),
            kind: DimKind::Affinity,
            provenance: Provenance::new("affinity_dimension_bisection", &(rows, n, tol)),
        },
        level: n,
        root_at_level: root_n,
        half_level: half,
        root_at_half_level: root_half,
        extrapolated: 2.0 * root_n - root_half,
        level_gap: (root_n - root_half).abs(),
    })
}
