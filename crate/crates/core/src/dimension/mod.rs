//! Closed-form and semi-analytic dimension quantities.
//!
//! The conditional entropies `h_i` are never estimated here; they come either
//! from a closed form (Bedford-McMullen carpets, separated self-similar
//! systems) or from the caller.

mod carpet;
mod pressure;

pub use carpet::{carpet_oracle, mcmullen_weights, CarpetOracle};
pub use pressure::{
    affinity_dimension, pressure, singular_value_function, AffinityDimension, SingularValueTable,
    WORD_BUDGET,
};

use serde::{Deserialize, Serialize};

use crate::cocycle::LyapunovSpectrum;
use crate::error::{Error, Result};
use crate::provenance::Provenance;

/// Slack used when comparing entropies and rates that should agree exactly.
const EXACT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropySource {
    ClosedFormCarpet,
    UserSupplied,
    Degenerate,
}

/// Conditional entropies `h_0 >= h_1 >= .. >= h_s >= 0` in nats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropySequence {
    values: Vec<f64>,
    source: EntropySource,
}

impl EntropySequence {
    pub fn new(values: Vec<f64>, source: EntropySource) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidEntropy("empty sequence".into()));
        }
        if let Some(i) = values.iter().position(|h| !h.is_finite() || *h < 0.0) {
            return Err(Error::InvalidEntropy(format!(
                "h_{i} = {} is not a nonnegative finite number",
                values[i]
            )));
        }
        if let Some(i) = values.windows(2).position(|w| w[1] > w[0] + EXACT_TOL) {
            return Err(Error::InvalidEntropy(format!(
                "sequence must be nonincreasing, but h_{} = {} > h_{} = {}",
                i + 1,
                values[i + 1],
                i,
                values[i]
            )));
        }
        Ok(EntropySequence { values, source })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source(&self) -> EntropySource {
        self.source
    }

    pub fn h0(&self) -> f64 {
        self.values[0]
    }

    /// Check the structural caps: one entry per exponent plus one,
    /// `h_0 <= log |alphabet|`, and `h_i - h_{i+1} <= -lambda_{i+1} k_{i+1}`.
    pub fn check_caps(&self, spec: &LyapunovSpectrum, alphabet: Option<usize>) -> Result<()> {
        if self.values.len() != spec.len() + 1 {
            return Err(Error::InvalidEntropy(format!(
                "expected {} entries, got {}",
                spec.len() + 1,
                self.values.len()
            )));
        }
        if let Some(n) = alphabet {
            if self.h0() > (n as f64).ln() + EXACT_TOL {
                return Err(Error::InvalidEntropy(format!(
                    "h_0 = {} exceeds log {n}",
                    self.h0()
                )));
            }
        }
        for (i, w) in self.values.windows(2).enumerate() {
            let lambda = spec.exponents[i];
            if lambda.is_finite() {
                let cap = -lambda * spec.multiplicities[i] as f64;
                if w[0] - w[1] > cap + EXACT_TOL {
                    return Err(Error::InvalidEntropy(format!(
                        "drop h_{i} - h_{} exceeds {cap}",
                        i + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimKind {
    Lyapunov,
    Affinity,
    LyFormula,
    CarpetExact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimValue {
    pub value: f64,
    /// `min(d, value)`.
    pub capped: f64,
    pub kind: DimKind,
    pub provenance: Provenance,
}

impl DimValue {
    fn new<T: Serialize + ?Sized>(
        value: f64,
        d: usize,
        kind: DimKind,
        method: &str,
        inputs: &T,
    ) -> Self {
        DimValue {
            value,
            capped: value.min(d as f64),
            kind,
            provenance: Provenance::new(method, inputs),
        }
    }
}

fn require_contracting(spec: &LyapunovSpectrum) -> Result<()> {
    if !(spec.top() < 0.0) {
        return Err(Error::Precondition(format!(
            "top exponent {} is not negative",
            spec.top()
        )));
    }
    Ok(())
}

/// `sum_{i=0}^{s-1} (h_{i+1} - h_i) / lambda_{i+1}`, with terms over a `-inf`
/// exponent contributing zero.
pub fn ly_formula(h: &EntropySequence, spec: &LyapunovSpectrum) -> Result<DimValue> {
    if h.values.len() != spec.len() + 1 {
        return Err(Error::invalid(
            "entropies",
            format!(
                "{} exponents need {} entropies, got {}",
                spec.len(),
                spec.len() + 1,
                h.values.len()
            ),
        ));
    }
    require_contracting(spec)?;
    let value: f64 = h
        .values
        .windows(2)
        .zip(&spec.exponents)
        .map(|(w, &lambda)| {
            if lambda.is_finite() {
                (w[1] - w[0]) / lambda
            } else {
                0.0
            }
        })
        .sum();
    let value = value.max(0.0);
    Ok(DimValue::new(
        value,
        spec.dim(),
        DimKind::LyFormula,
        "ledrappier_young_sum",
        &(h, spec),
    ))
}

/// Lyapunov dimension of a measure with entropy `h0` and the given spectrum.
pub fn lyapunov_dimension(h0: f64, spec: &LyapunovSpectrum) -> Result<DimValue> {
    if !(h0 >= 0.0) || !h0.is_finite() {
        return Err(Error::Precondition(format!(
            "entropy must be finite and nonnegative, got {h0}"
        )));
    }
    require_contracting(spec)?;
    let d = spec.dim();
    let rates = spec.cumulative_rates();
    let dims = spec.cumulative_dims();
    let s = spec.len();
    let value = if h0 >= rates[s] {
        d as f64 * h0 / rates[s]
    } else {
        let j = (1..=s)
            .find(|&j| rates[j - 1] <= h0 && h0 < rates[j])
            .expect("rates increase from 0 past h0");
        let lambda = spec.exponents[j - 1];
        let increment = if lambda.is_finite() {
            (h0 - rates[j - 1]) / -lambda
        } else {
            0.0
        };
        dims[j - 1] as f64 + increment
    };
    Ok(DimValue::new(
        value,
        d,
        DimKind::Lyapunov,
        "lyapunov_dimension",
        &(h0, spec),
    ))
}

/// Which of the two equality conditions for `dim = min(d, dim_LY)` holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Sharpness {
    /// `condition` is 1 (`h_0 >= L_s`) or 2 (`h_0` in `[L_{j-1}, L_j)`).
    Equal { condition: u8 },
    /// First index `i` at which the required entropy pattern fails.
    Strict { witness: usize },
}

/// Evaluate the equality conditions between the Ledrappier-Young sum and the
/// capped Lyapunov dimension exactly (up to rounding).
pub fn sharpness_check(h: &EntropySequence, spec: &LyapunovSpectrum) -> Result<Sharpness> {
    let s = spec.len();
    if h.values.len() != s + 1 {
        return Err(Error::invalid(
            "entropies",
            format!("expected {} entries, got {}", s + 1, h.values.len()),
        ));
    }
    let h0 = h.h0();
    let rates = spec.cumulative_rates();
    let tol = EXACT_TOL * (1.0 + h0);
    let matches = |i: usize, target: f64| (h.values[i] - target).abs() <= tol;
    let (condition, first_bad) = if h0 >= rates[s] - tol {
        (1, (1..=s).find(|&i| !matches(i, h0 - rates[i])))
    } else {
        let j = (1..=s)
            .find(|&j| rates[j - 1] <= h0 + tol && h0 < rates[j] - tol)
            .expect("rates increase from 0 past h0");
        (
            2,
            (1..=s).find(|&i| !matches(i, if i < j { h0 - rates[i] } else { 0.0 })),
        )
    };
    Ok(match first_bad {
        None => Sharpness::Equal { condition },
        Some(witness) => Sharpness::Strict { witness },
    })
}
