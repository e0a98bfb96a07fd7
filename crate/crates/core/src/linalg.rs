//! Small dense linear-algebra helpers on top of nalgebra.
//!
//! Every matrix in this crate is tiny (n <= 12), so nothing here tries to be
//! clever about allocation.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

pub fn all_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn ensure_finite(m: &Mat, what: &str) -> Result<()> {
    if all_finite(m) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} contains non-finite entries")))
    }
}

/// Eigenvalues of a real square matrix (real Schur form via shifted QR).
pub fn eigenvalues(m: &Mat) -> Vec<Complex<f64>> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.clone().complex_eigenvalues().iter().copied().collect()
}

pub fn spectral_radius(m: &Mat) -> f64 {
    eigenvalues(m).iter().map(|l| l.norm()).fold(0.0, f64::max)
}

/// Largest eigenvalue of the symmetric part of `m`.
pub fn sym_max_eigenvalue(m: &Mat) -> f64 {
    let s = symmetrize(m);
    s.symmetric_eigenvalues().iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn sym_min_eigenvalue(m: &Mat) -> f64 {
    let s = symmetrize(m);
    s.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Largest eigenpair of a symmetric matrix.
pub fn sym_max_eigenpair(m: &Mat) -> (f64, Vector) {
    let eig = nalgebra::SymmetricEigen::new(symmetrize(m));
    let (idx, val) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    (val, eig.eigenvectors.column(idx).into_owned())
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Numerical rank with threshold `rel_tol * sigma_max`.
pub fn rank(m: &Mat, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Complex rank of `[lambda*I - a; c]`, computed on the real embedding
/// `[[Re, -Im], [Im, Re]]` whose rank is twice the complex rank.
pub fn pbh_rank(a: &Mat, c: &Mat, lambda: Complex<f64>, rel_tol: f64) -> usize {
    let n = a.nrows();
    let p = c.nrows();
    let rows = n + p;
    let mut re = Mat::zeros(rows, n);
    let mut im = Mat::zeros(rows, n);
    for i in 0..n {
        for j in 0..n {
            re[(i, j)] = if i == j { lambda.re } else { 0.0 } - a[(i, j)];
        }
        im[(i, i)] = lambda.im;
    }
    for i in 0..p {
        for j in 0..n {
            re[(n + i, j)] = c[(i, j)];
        }
    }
    if lambda.im == 0.0 {
        return rank(&re, rel_tol);
    }
    let mut big = Mat::zeros(2 * rows, 2 * n);
    big.view_mut((0, 0), (rows, n)).copy_from(&re);
    big.view_mut((0, n), (rows, n)).copy_from(&(-&im));
    big.view_mut((rows, 0), (rows, n)).copy_from(&im);
    big.view_mut((rows, n), (rows, n)).copy_from(&re);
    rank(&big, rel_tol) / 2
}

/// Orthonormal basis of the numerical null space of `m` (columns).
pub fn null_space(m: &Mat, rel_tol: f64) -> Mat {
    let n = m.ncols();
    if n == 0 {
        return Mat::zeros(0, 0);
    }
    // Pad to square so the SVD yields a full right basis.
    let rows = m.nrows().max(n);
    let mut padded = Mat::zeros(rows, n);
    padded.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let thresh = rel_tol * smax.max(1.0);
    let cols: Vec<Vector> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= thresh)
        .map(|(i, _)| v_t.row(i).transpose())
        .collect();
    if cols.is_empty() {
        return Mat::zeros(n, 0);
    }
    Mat::from_columns(&cols)
}

/// Stack selected rows of `m` (0-based indices) into a new matrix.
pub fn select_rows(m: &Mat, rows: &[usize]) -> Mat {
    Mat::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

pub fn to_nested(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn from_nested(rows: &[Vec<f64>]) -> Result<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    if rows.iter().any(|x| x.len() != c) {
        return Err(Error::invalid("ragged matrix rows"));
    }
    Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

/// Serde adapter storing a matrix as nested row arrays.
pub mod serde_mat {
    use super::Mat;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
        super::to_nested(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        super::from_nested(&rows).map_err(serde::de::Error::custom)
    }
}

pub mod serde_mats {
    use super::Mat;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(ms: &[Mat], s: S) -> Result<S::Ok, S::Error> {
        ms.iter().map(super::to_nested).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Mat>, D::Error> {
        let all = Vec::<Vec<Vec<f64>>>::deserialize(d)?;
        all.iter()
            .map(|rows| super::from_nested(rows).map_err(serde::de::Error::custom))
            .collect()
    }
}
