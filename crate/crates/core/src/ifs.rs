//! Affine iterated function systems, symbolic composition and the coding map.

use serde::{Deserialize, Serialize};

use crate::cocycle;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::measure::ShiftMeasure;
use crate::word::Word;

/// `x -> matrix * x + translation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "AffineMapRepr", try_from = "AffineMapRepr")]
pub struct AffineMap {
    matrix: Matrix,
    translation: Vector,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AffineMapRepr {
    matrix: Vec<Vec<f64>>,
    translation: Vec<f64>,
}

impl From<AffineMap> for AffineMapRepr {
    fn from(m: AffineMap) -> Self {
        AffineMapRepr {
            matrix: linalg::to_rows(&m.matrix),
            translation: m.translation.iter().copied().collect(),
        }
    }
}

impl TryFrom<AffineMapRepr> for AffineMap {
    type Error = Error;

    fn try_from(r: AffineMapRepr) -> Result<Self> {
        AffineMap::from_rows(&r.matrix, &r.translation)
    }
}

impl AffineMap {
    pub fn new(matrix: Matrix, translation: Vector) -> Result<Self> {
        let d = matrix.nrows();
        if d == 0 {
            return Err(Error::invalid("matrix", "dimension must be at least 1"));
        }
        if matrix.ncols() != d {
            return Err(Error::invalid(
                "matrix",
                format!("expected a square matrix, got {}x{}", d, matrix.ncols()),
            ));
        }
        if translation.len() != d {
            return Err(Error::invalid(
                "translation",
                format!("expected length {d}, got {}", translation.len()),
            ));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("matrix", "entries must be finite"));
        }
        if translation.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("translation", "entries must be finite"));
        }
        Ok(AffineMap {
            matrix,
            translation,
        })
    }

    /// Matrix given row-major.
    pub fn from_rows(rows: &[Vec<f64>], translation: &[f64]) -> Result<Self> {
        if let Some(i) = rows.iter().position(|r| r.len() != rows.len()) {
            return Err(Error::invalid(
                format!("matrix[{i}]"),
                format!("expected {} entries, got {}", rows.len(), rows[i].len()),
            ));
        }
        AffineMap::new(
            linalg::from_rows(rows),
            Vector::from_column_slice(translation),
        )
    }

    pub fn identity(d: usize) -> Self {
        AffineMap {
            matrix: Matrix::identity(d, d),
            translation: Vector::zeros(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn translation(&self) -> &Vector {
        &self.translation
    }

    pub fn apply(&self, x: &Vector) -> Vector {
        &self.matrix * x + &self.translation
    }

    /// `self ∘ inner`.
    pub fn after(&self, inner: &AffineMap) -> AffineMap {
        AffineMap {
            matrix: &self.matrix * &inner.matrix,
            translation: &self.matrix * &inner.translation + &self.translation,
        }
    }
}

/// A finite family of affine maps of a common dimension, indexed by the
/// alphabet `{0, .., n-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<AffineMap>", into = "Vec<AffineMap>")]
pub struct AffineIFS {
    maps: Vec<AffineMap>,
}

impl TryFrom<Vec<AffineMap>> for AffineIFS {
    type Error = Error;

    fn try_from(maps: Vec<AffineMap>) -> Result<Self> {
        AffineIFS::with_single_map_allowed(maps)
    }
}

impl From<AffineIFS> for Vec<AffineMap> {
    fn from(ifs: AffineIFS) -> Self {
        ifs.maps
    }
}

/// Result of evaluating the coding map along a finite word.
#[derive(Debug, Clone, PartialEq)]
pub struct CodedPoint {
    pub point: Vector,
    pub depth: usize,
    /// Bound on the distance from `point` to the coding map of any infinite
    /// extension of the word; `+inf` when the system is not uniformly
    /// contracting.
    pub tail_bound: f64,
    pub uniformly_contracting: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionEstimate {
    pub lambda_hat: f64,
    pub stderr: f64,
    pub is_contracting: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SscCertificate {
    pub certified: bool,
    pub ball: Option<(Vector, f64)>,
}

const SSC_RADII: usize = 64;

impl AffineIFS {
    /// At least two maps, all of the same dimension.
    pub fn new(maps: Vec<AffineMap>) -> Result<Self> {
        if maps.len() < 2 {
            return Err(Error::invalid(
                "maps",
                format!("an IFS needs at least 2 maps, got {}", maps.len()),
            ));
        }
        Self::with_single_map_allowed(maps)
    }

    pub fn with_single_map_allowed(maps: Vec<AffineMap>) -> Result<Self> {
        let Some(first) = maps.first() else {
            return Err(Error::invalid("maps", "an IFS needs at least one map"));
        };
        let d = first.dim();
        if let Some(i) = maps.iter().position(|m| m.dim() != d) {
            return Err(Error::invalid(
                format!("maps[{i}]"),
                format!("dimension {} differs from {d}", maps[i].dim()),
            ));
        }
        Ok(AffineIFS { maps })
    }

    /// Build from row-major matrices and translations.
    pub fn from_parts(matrices: &[Vec<Vec<f64>>], translations: &[Vec<f64>]) -> Result<Self> {
        if matrices.len() != translations.len() {
            return Err(Error::invalid(
                "translations",
                format!(
                    "{} translations for {} matrices",
                    translations.len(),
                    matrices.len()
                ),
            ));
        }
        let maps = matrices
            .iter()
            .zip(translations)
            .enumerate()
            .map(|(i, (m, a))| {
                AffineMap::from_rows(m, a).map_err(|e| e.prefixed(&format!("maps[{i}]")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::with_single_map_allowed(maps)
    }

    /// Same linear parts with new translations.
    pub fn with_translations(mats: &[Matrix], translations: &[Vector]) -> Result<Self> {
        let maps = mats
            .iter()
            .zip(translations)
            .map(|(m, a)| AffineMap::new(m.clone(), a.clone()))
            .collect::<Result<Vec<_>>>()?;
        Self::with_single_map_allowed(maps)
    }

    pub fn dim(&self) -> usize {
        self.maps[0].dim()
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn maps(&self) -> &[AffineMap] {
        &self.maps
    }

    pub fn matrices(&self) -> Vec<Matrix> {
        self.maps.iter().map(|m| m.matrix.clone()).collect()
    }

    /// `max_j ||M_j||`; the system is uniformly contracting when this is < 1.
    pub fn contraction_factor(&self) -> f64 {
        self.maps
            .iter()
            .map(|m| linalg::op_norm(&m.matrix))
            .fold(0.0, f64::max)
    }

    pub fn max_translation_norm(&self) -> f64 {
        self.maps
            .iter()
            .map(|m| m.translation.norm())
            .fold(0.0, f64::max)
    }

    /// `S_{w_0} ∘ S_{w_1} ∘ ... ∘ S_{w_{n-1}}` as a single map.
    pub fn compose(&self, w: &Word) -> Result<AffineMap> {
        w.validate(self.len())?;
        let d = self.dim();
        let mut matrix = Matrix::identity(d, d);
        let mut translation = Vector::zeros(d);
        for &j in w.symbols() {
            let s = &self.maps[j];
            translation += &matrix * &s.translation;
            matrix *= &s.matrix;
        }
        Ok(AffineMap {
            matrix,
            translation,
        })
    }

    /// Truncated coding map `sum_k M_{w_0}..M_{w_{k-1}} a_{w_k}` with a
    /// deterministic bound on the truncation error.
    pub fn code_point(&self, w: &Word) -> Result<CodedPoint> {
        let composed = self.compose(w)?;
        let rho = self.contraction_factor();
        let uniformly_contracting = rho < 1.0;
        let tail_bound = if uniformly_contracting {
            linalg::op_norm(&composed.matrix) * self.max_translation_norm() / (1.0 - rho)
        } else {
            log::warn!(
                "IFS is not uniformly contracting (max norm {rho}); coding-map tail is unbounded"
            );
            f64::INFINITY
        };
        Ok(CodedPoint {
            point: composed.translation,
            depth: w.len(),
            tail_bound,
            uniformly_contracting,
        })
    }

    /// Depth after which the uniform tail bound drops below `tol`, or `None`
    /// if the system is not uniformly contracting.
    pub fn depth_for_tolerance(&self, tol: f64) -> Option<usize> {
        let rho = self.contraction_factor();
        if rho >= 1.0 {
            return None;
        }
        let scale = self.max_translation_norm() / (1.0 - rho);
        if scale <= tol || rho == 0.0 {
            return Some(1);
        }
        Some(((tol / scale).ln() / rho.ln()).ceil().max(1.0) as usize)
    }

    /// Monte Carlo estimate of the top Lyapunov exponent of the linear parts.
    pub fn average_contraction(
        &self,
        mu: &ShiftMeasure,
        n_steps: usize,
        n_reps: usize,
        seed: u64,
    ) -> Result<ContractionEstimate> {
        if n_steps < 100 {
            return Err(Error::Precondition(format!(
                "n_steps must be at least 100, got {n_steps}"
            )));
        }
        let (lambda_hat, stderr) =
            cocycle::top_exponent_unchecked(&self.matrices(), mu, n_steps, n_reps, seed)?;
        Ok(ContractionEstimate {
            lambda_hat,
            stderr,
            is_contracting: lambda_hat + 2.0 * stderr < 0.0,
        })
    }

    /// Mean of the invariant measure for uniform weights, `(I - mean M)^{-1} mean a`.
    pub fn uniform_centroid(&self) -> Option<Vector> {
        let d = self.dim();
        let n = self.len() as f64;
        let mean_m = self
            .maps
            .iter()
            .fold(Matrix::zeros(d, d), |acc, m| acc + &m.matrix)
            / n;
        let mean_a = self
            .maps
            .iter()
            .fold(Vector::zeros(d), |acc, m| acc + &m.translation)
            / n;
        (Matrix::identity(d, d) - mean_m).lu().solve(&mean_a)
    }

    /// Conservative search for a closed ball `B` with `S_j(B) ⊂ B` and the
    /// images pairwise disjoint. A negative answer does not mean separation
    /// fails.
    pub fn strong_separation_certificate(&self) -> Result<SscCertificate> {
        let norms: Vec<f64> = self
            .maps
            .iter()
            .map(|m| linalg::op_norm(&m.matrix))
            .collect();
        if let Some(j) = norms.iter().position(|&r| r >= 1.0) {
            return Err(Error::Precondition(format!(
                "map {j} has norm {} >= 1",
                norms[j]
            )));
        }
        let none = SscCertificate {
            certified: false,
            ball: None,
        };
        let Some(center) = self.uniform_centroid() else {
            return Ok(none);
        };
        let images: Vec<Vector> = self.maps.iter().map(|m| m.apply(&center)).collect();
        let r_min = images
            .iter()
            .zip(&norms)
            .map(|(img, r)| (img - &center).norm() / (1.0 - r))
            .fold(0.0, f64::max);
        let r_min = if r_min > 0.0 {
            r_min
        } else {
            f64::MIN_POSITIVE
        };
        for k in 0..SSC_RADII {
            let radius = r_min * 8f64.powf(k as f64 / (SSC_RADII - 1) as f64);
            let contained = images
                .iter()
                .zip(&norms)
                .all(|(img, r)| (img - &center).norm() + radius * r <= radius * (1.0 + 1e-12));
            if !contained {
                continue;
            }
            let mut separated = true;
            'pairs: for i in 0..self.len() {
                for j in i + 1..self.len() {
                    let gap = &images[j] - &images[i];
                    let dist = gap.norm();
                    if dist == 0.0 {
                        separated = false;
                        break 'pairs;
                    }
                    let u = gap / dist;
                    // support widths of the two image ellipsoids along u
                    let wi = radius * (self.maps[i].matrix.transpose() * &u).norm();
                    let wj = radius * (self.maps[j].matrix.transpose() * &u).norm();
                    if dist <= wi + wj {
                        separated = false;
                        break 'pairs;
                    }
                }
            }
            if separated {
                return Ok(SscCertificate {
                    certified: true,
                    ball: Some((center, radius)),
                });
            }
            // larger radii only widen the images
            break;
        }
        Ok(none)
    }
}
