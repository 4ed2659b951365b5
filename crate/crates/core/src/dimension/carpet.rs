//! Bedford-McMullen carpets: closed-form spectra, entropies and dimensions.
//!
//! The maps are `(x, y) -> ((x + i) / n, (y + j) / m)` for chosen digits
//! `(i, j)` with `2 <= m <= n`. The vertical direction is the weak one, so
//! `lambda_1 = -log m` and `lambda_2 = -log n`, and `h_1` is the entropy left
//! after conditioning on the row symbol.

use std::collections::BTreeSet;

use serde::Serialize;

use super::{ly_formula, DimKind, DimValue, EntropySequence, EntropySource};
use crate::cocycle::LyapunovSpectrum;
use crate::error::{Error, Result};
use crate::ifs::AffineIFS;
use crate::measure::{shannon_entropy, ShiftMeasure};
use crate::provenance::Provenance;

#[derive(Debug, Clone, PartialEq)]
pub struct CarpetOracle {
    pub ifs: AffineIFS,
    pub measure: ShiftMeasure,
    /// Distribution of the row index.
    pub row_marginal: Vec<f64>,
    pub entropies: EntropySequence,
    pub spectrum: LyapunovSpectrum,
    /// Dimension of the Bernoulli measure.
    pub dim_mu: DimValue,
    /// Hausdorff dimension of the attractor.
    pub dim_k: DimValue,
}

#[derive(Serialize)]
struct CarpetInputs<'a> {
    n_cols: usize,
    m_rows: usize,
    digits: &'a [(usize, usize)],
    probs: &'a [f64],
}

fn check_digits(n_cols: usize, m_rows: usize, digits: &[(usize, usize)]) -> Result<()> {
    if m_rows < 2 || m_rows > n_cols {
        return Err(Error::invalid(
            "carpet",
            format!("need 2 <= m_rows <= n_cols, got m_rows={m_rows}, n_cols={n_cols}"),
        ));
    }
    if digits.is_empty() {
        return Err(Error::invalid("carpet.digits", "no digits"));
    }
    let distinct: BTreeSet<_> = digits.iter().collect();
    if distinct.len() != digits.len() {
        return Err(Error::invalid("carpet.digits", "digits must be distinct"));
    }
    if let Some(k) = digits.iter().position(|&(i, j)| i >= n_cols || j >= m_rows) {
        return Err(Error::invalid(
            format!("carpet.digits[{k}]"),
            "digit outside the grid",
        ));
    }
    Ok(())
}

fn row_counts(m_rows: usize, digits: &[(usize, usize)]) -> Vec<usize> {
    let mut t = vec![0; m_rows];
    for &(_, j) in digits {
        t[j] += 1;
    }
    t
}

/// Weights `p_(i,j) = t_j^{theta - 1} / sum_k t_k^theta`, `theta = log m / log n`,
/// whose Bernoulli measure has the dimension of the whole carpet.
pub fn mcmullen_weights(
    n_cols: usize,
    m_rows: usize,
    digits: &[(usize, usize)],
) -> Result<Vec<f64>> {
    check_digits(n_cols, m_rows, digits)?;
    let theta = (m_rows as f64).ln() / (n_cols as f64).ln();
    let t = row_counts(m_rows, digits);
    let z: f64 = t
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| (c as f64).powf(theta))
        .sum();
    Ok(digits
        .iter()
        .map(|&(_, j)| (t[j] as f64).powf(theta - 1.0) / z)
        .collect())
}

/// Closed-form quantities for a carpet with Bernoulli weights `probs` on the
/// digits (`None` for uniform).
pub fn carpet_oracle(
    n_cols: usize,
    m_rows: usize,
    digits: &[(usize, usize)],
    probs: Option<&[f64]>,
) -> Result<CarpetOracle> {
    check_digits(n_cols, m_rows, digits)?;
    let probs: Vec<f64> = match probs {
        Some(p) => p.to_vec(),
        None => vec![1.0 / digits.len() as f64; digits.len()],
    };
    if probs.len() != digits.len() {
        return Err(Error::invalid(
            "carpet.probs",
            "one probability per digit required",
        ));
    }
    if probs.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::invalid(
            "carpet.probs",
            "probabilities must be positive on the digits",
        ));
    }
    let measure = ShiftMeasure::bernoulli(probs.clone()).map_err(|e| e.prefixed("carpet"))?;

    let (n, m) = (n_cols as f64, m_rows as f64);
    let mats = vec![vec![vec![1.0 / n, 0.0], vec![0.0, 1.0 / m]]; digits.len()];
    let translations: Vec<Vec<f64>> = digits
        .iter()
        .map(|&(i, j)| vec![i as f64 / n, j as f64 / m])
        .collect();
    let ifs = AffineIFS::from_parts(&mats, &translations)?;

    let mut row_marginal = vec![0.0; m_rows];
    for (&(_, j), p) in digits.iter().zip(&probs) {
        row_marginal[j] += p;
    }
    let h_p = shannon_entropy(&probs);
    let h_q = shannon_entropy(&row_marginal);

    let (entropies, spectrum) = if m_rows == n_cols {
        (
            EntropySequence::new(vec![h_p, 0.0], EntropySource::ClosedFormCarpet)?,
            LyapunovSpectrum::exact(vec![-n.ln()], vec![2])?,
        )
    } else {
        (
            EntropySequence::new(
                vec![h_p, (h_p - h_q).max(0.0), 0.0],
                EntropySource::ClosedFormCarpet,
            )?,
            LyapunovSpectrum::exact(vec![-m.ln(), -n.ln()], vec![1, 1])?,
        )
    };
    let dim_mu = ly_formula(&entropies, &spectrum)?;

    let t = row_counts(m_rows, digits);
    let set_dim = if m_rows == n_cols {
        (digits.len() as f64).ln() / n.ln()
    } else {
        let theta = m.ln() / n.ln();
        t.iter()
            .filter(|&&c| c > 0)
            .map(|&c| (c as f64).powf(theta))
            .sum::<f64>()
            .ln()
            / m.ln()
    };
    let inputs = CarpetInputs {
        n_cols,
        m_rows,
        digits,
        probs: &probs,
    };
    let dim_k = DimValue {
        value: set_dim,
        capped: set_dim.min(2.0),
        kind: DimKind::CarpetExact,
        provenance: Provenance::new("mcmullen_set_dimension", &inputs),
    };
    Ok(CarpetOracle {
        ifs,
        measure,
        row_marginal,
        entropies,
        spectrum,
        dim_mu: DimValue {
            provenance: Provenance::new("carpet_ledrappier_young", &inputs),
            kind: DimKind::CarpetExact,
            ..dim_mu
        },
        dim_k,
    })
}
