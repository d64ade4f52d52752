//! Dense real-matrix numerics shared by every other module.
//!
//! Matrices are `nalgebra::DMatrix<f64>`. Rank decisions are relative: a
//! singular value counts as nonzero when it exceeds `tol * sigma_max`.

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default relative rank tolerance, `max(rows, cols) * eps`.
pub fn default_rank_tol(m: &Mat) -> f64 {
    m.nrows().max(m.ncols()).max(1) as f64 * f64::EPSILON
}

pub fn all_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Block-Hankel matrix with `depth` block rows and `width` columns whose
/// block `(j, k)` is `seq[start + j + k]`.
pub fn hankel(seq: &[Vector], start: usize, depth: usize, width: usize) -> Result<Mat> {
    if depth == 0 || width == 0 {
        return Err(Error::InvalidArgument("hankel depth and width must be positive".into()));
    }
    let needed = start + depth + width - 1;
    if seq.len() < needed {
        return Err(Error::InsufficientData(format!(
            "hankel needs {needed} samples, sequence has {}",
            seq.len()
        )));
    }
    let d = seq[start].len();
    if let Some(bad) = seq[start..needed].iter().position(|v| v.len() != d) {
        return Err(Error::Dimension(format!(
            "sample {} has dimension {}, expected {d}",
            start + bad,
            seq[start + bad].len()
        )));
    }
    let mut h = Mat::zeros(depth * d, width);
    for j in 0..depth {
        for k in 0..width {
            h.view_mut((j * d, k), (d, 1)).copy_from(&seq[start + j + k]);
        }
    }
    Ok(h)
}

/// Full singular value decomposition `m = U diag(s) V'` with square `U`
/// and `V` and `s` in descending order.
///
/// Computed with faer: nalgebra's bidiagonal SVD loses several digits on
/// some wide data matrices.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Mat,
    pub s: Vec<f64>,
    pub v: Mat,
}

pub fn svd(m: &Mat) -> Svd {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Svd { u: Mat::identity(rows, rows), s: Vec::new(), v: Mat::identity(cols, cols) };
    }
    let f = faer::MatRef::from_column_major_slice(m.as_slice(), rows, cols);
    let dec = f.svd().expect("SVD of a finite matrix converges");
    let (u, v, s) = (dec.U(), dec.V(), dec.S().column_vector());
    Svd {
        u: Mat::from_fn(rows, rows, |i, j| u[(i, j)]),
        s: (0..rows.min(cols)).map(|i| s[i]).collect(),
        v: Mat::from_fn(cols, cols, |i, j| v[(i, j)]),
    }
}

/// Singular values in descending order.
pub fn singular_values(m: &Mat) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let f = faer::MatRef::from_column_major_slice(m.as_slice(), m.nrows(), m.ncols());
    let mut s = f.singular_values().expect("SVD of a finite matrix converges");
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn sigma_max(m: &Mat) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

pub fn rank(m: &Mat, tol: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        Some(&smax) if smax > 0.0 => s.iter().filter(|&&v| v > tol * smax).count(),
        _ => 0,
    }
}

/// Orthonormal basis of the null space of `m` (one column per direction).
///
/// Returns a `cols x 0` matrix when the kernel is trivial.
pub fn kernel_basis(m: &Mat, tol: f64) -> Mat {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return Mat::zeros(0, 0);
    }
    if rows == 0 {
        return Mat::identity(cols, cols);
    }
    let d = svd(m);
    let smax = d.s.first().copied().unwrap_or(0.0);
    let null: Vec<usize> = (0..cols).filter(|&i| i >= d.s.len() || smax <= 0.0 || d.s[i] <= tol * smax).collect();
    Mat::from_fn(cols, null.len(), |r, j| d.v[(r, null[j])])
}

/// Moore-Penrose pseudo-inverse with relative singular value cutoff.
pub fn pinv(m: &Mat, tol: f64) -> Mat {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Mat::zeros(cols, rows);
    }
    let d = svd(m);
    let smax = d.s[0];
    let mut out = Mat::zeros(cols, rows);
    for (i, &s) in d.s.iter().enumerate() {
        if s > tol * smax && s > 0.0 {
            out += (d.v.column(i) * d.u.column(i).transpose()) / s;
        }
    }
    out
}

pub fn eigenvalues(m: &Mat) -> Result<Vec<Complex<f64>>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "eigenvalues need a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Inconclusive("real Schur iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

pub fn spectral_radius(m: &Mat) -> Result<f64> {
    Ok(eigenvalues(m)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

pub fn sym(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of the symmetric part, ascending.
pub fn sym_eigenvalues(m: &Mat) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut e: Vec<f64> = SymmetricEigen::new(sym(m)).eigenvalues.iter().copied().collect();
    e.sort_by(|a, b| a.total_cmp(b));
    e
}

pub fn max_sym_eigenvalue(m: &Mat) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(f64::NEG_INFINITY)
}

pub fn min_sym_eigenvalue(m: &Mat) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::INFINITY)
}

/// Symmetric square root of a positive semidefinite matrix (negative
/// eigenvalues are clipped to zero).
pub fn psd_sqrt(m: &Mat) -> Mat {
    if m.is_empty() {
        return m.clone();
    }
    let eig = SymmetricEigen::new(sym(m));
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * Mat::from_diagonal(&d) * eig.eigenvectors.transpose()
}

pub fn spd_inverse(m: &Mat) -> Result<Mat> {
    sym(m)
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::InvalidArgument("matrix is not positive definite".into()))
}

pub fn vstack(parts: &[&Mat]) -> Result<Mat> {
    let cols = parts.first().map_or(0, |p| p.ncols());
    if parts.iter().any(|p| p.ncols() != cols) {
        return Err(Error::Dimension("vstack: column counts differ".into()));
    }
    let rows = parts.iter().map(|p| p.nrows()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut r = 0;
    for p in parts {
        out.view_mut((r, 0), p.shape()).copy_from(*p);
        r += p.nrows();
    }
    Ok(out)
}

pub fn hstack(parts: &[&Mat]) -> Result<Mat> {
    let rows = parts.first().map_or(0, |p| p.nrows());
    if parts.iter().any(|p| p.nrows() != rows) {
        return Err(Error::Dimension("hstack: row counts differ".into()));
    }
    let cols = parts.iter().map(|p| p.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut c = 0;
    for p in parts {
        out.view_mut((0, c), p.shape()).copy_from(*p);
        c += p.ncols();
    }
    Ok(out)
}

pub fn block_diag(parts: &[&Mat]) -> Mat {
    let rows = parts.iter().map(|p| p.nrows()).sum();
    let cols = parts.iter().map(|p| p.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for p in parts {
        out.view_mut((r, c), p.shape()).copy_from(*p);
        r += p.nrows();
        c += p.ncols();
    }
    out
}

/// Serde adapter storing a matrix as nested row arrays.
pub mod rows {
    use super::Mat;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(D::Error::custom)
    }

    pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat, String> {
        let ncols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != ncols) {
            return Err("ragged matrix rows".into());
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        if flat.iter().any(|v| !v.is_finite()) {
            return Err("non-finite matrix entry".into());
        }
        Ok(Mat::from_row_slice(rows.len(), ncols, &flat))
    }
}
