//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Singular values in descending order.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    match (m.nrows(), m.ncols()) {
        (1, 1) => vec![m[(0, 0)].abs()],
        (2, 2) => {
            let (s1, s2) = singular_values_2x2(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
            vec![s1, s2]
        }
        _ => {
            let mut s: Vec<f64> = m
                .clone()
                .svd(false, false)
                .singular_values
                .iter()
                .copied()
                .collect();
            s.sort_by(|a, b| b.total_cmp(a));
            s
        }
    }
}

/// Closed-form singular values of [[a, b], [c, d]], largest first. The small
/// one is recovered from the determinant to avoid cancellation.
pub fn singular_values_2x2(a: f64, b: f64, c: f64, d: f64) -> (f64, f64) {
    let q = (a + d).hypot(c - b);
    let r = (a - d).hypot(b + c);
    let s1 = 0.5 * (q + r);
    if s1 == 0.0 {
        return (0.0, 0.0);
    }
    let s2 = ((a * d - b * c).abs() / s1).min(s1);
    (s1, s2)
}

/// Operator 2-norm.
pub fn op_norm(m: &Matrix) -> f64 {
    singular_values(m)[0]
}

/// Orthonormal basis (as columns) of the orthogonal complement of the column
/// span of `basis`, which must itself be orthonormal.
pub fn orthogonal_complement(basis: &Matrix) -> Matrix {
    let d = basis.nrows();
    let k = basis.ncols();
    if k == 0 {
        return Matrix::identity(d, d);
    }
    let proj = Matrix::identity(d, d) - basis * basis.transpose();
    let svd = proj.svd(true, false);
    let u = svd.u.expect("u requested");
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let cols: Vec<Vector> = order
        .iter()
        .take(d - k)
        .map(|&i| u.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        return Matrix::zeros(d, 0);
    }
    Matrix::from_columns(&cols)
}

/// Largest deviation of `q^T q` from the identity.
pub fn orthonormality_defect(q: &Matrix) -> f64 {
    let g = q.transpose() * q;
    let id = Matrix::identity(g.nrows(), g.ncols());
    (g - id).amax()
}

/// Sine of the largest principal angle between two subspaces of equal
/// dimension given by orthonormal column bases.
pub fn max_principal_sine(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.ncols(), b.ncols(), "subspace dimensions differ");
    if a.ncols() == 0 {
        return 0.0;
    }
    let residual = b - a * (a.transpose() * b);
    op_norm(&residual).min(1.0)
}

/// Sine of the smallest principal angle between two subspaces (typically of
/// complementary dimension). Equals 1 for orthogonal subspaces.
pub fn min_principal_sine(a: &Matrix, b: &Matrix) -> f64 {
    if a.ncols() == 0 || b.ncols() == 0 {
        return 1.0;
    }
    let cross = a.transpose() * b;
    let cos_max = singular_values(&cross)[0].min(1.0);
    (1.0 - cos_max * cos_max).max(0.0).sqrt()
}

/// Orthonormalize the columns of `m` (thin QR). Columns must be independent.
pub fn orthonormalize(m: &Matrix) -> Matrix {
    let k = m.ncols();
    let q = m.clone().qr().q();
    q.columns(0, k).into_owned()
}

/// Planar rotation by `theta` radians.
pub fn rotation2(theta: f64) -> Matrix {
    let (s, c) = theta.sin_cos();
    Matrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// Row-major nested vectors to a matrix. Rows must have equal length.
pub fn from_rows(rows: &[Vec<f64>]) -> Matrix {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    Matrix::from_fn(n, m, |i, j| rows[i][j])
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}
