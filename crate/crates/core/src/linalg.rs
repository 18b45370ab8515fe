//! Dense linear-algebra helpers shared by the builders, the solvers and the
//! verification code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen, SVD};

use crate::error::{Error, Result};

/// Relative singular-value cutoff used for every numerical rank decision.
pub const RANK_EPS: f64 = 1.0 / (1u64 << 40) as f64;

/// Threshold below which a singular value is treated as zero.
pub fn rank_tolerance(nrows: usize, ncols: usize, sigma_max: f64) -> f64 {
    nrows.max(ncols).max(1) as f64 * sigma_max * RANK_EPS
}

#[derive(Debug, Clone)]
pub struct RankReport {
    pub rank: usize,
    pub singular_values: Vec<f64>,
    pub tolerance: f64,
}

/// Numerical rank from the singular values of `m`.
pub fn numerical_rank(m: &DMatrix<f64>) -> RankReport {
    if m.is_empty() {
        return RankReport {
            rank: 0,
            singular_values: Vec::new(),
            tolerance: 0.0,
        };
    }
    let svd = SVD::new(m.clone(), false, false);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let sigma_max = sv.first().copied().unwrap_or(0.0);
    let tolerance = rank_tolerance(m.nrows(), m.ncols(), sigma_max);
    let rank = if sigma_max == 0.0 {
        0
    } else {
        sv.iter().filter(|&&s| s > tolerance).count()
    };
    RankReport {
        rank,
        singular_values: sv,
        tolerance,
    }
}

/// Greedy selection of linearly independent rows, preserving order.
///
/// A row is kept when its component orthogonal to the rows kept so far is
/// larger than the module-wide rank tolerance.
pub fn independent_rows(m: &DMatrix<f64>) -> Vec<usize> {
    let scale = m
        .row_iter()
        .map(|r| r.norm())
        .fold(0.0_f64, f64::max);
    if scale == 0.0 {
        return Vec::new();
    }
    let tol = rank_tolerance(m.nrows(), m.ncols(), scale);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept = Vec::new();
    for (i, row) in m.row_iter().enumerate() {
        let mut v: DVector<f64> = row.transpose();
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for q in &basis {
                let d = q.dot(&v);
                v.axpy(-d, q, 1.0);
            }
        }
        let nv = v.norm();
        if nv > tol {
            basis.push(v / nv);
            kept.push(i);
        }
    }
    kept
}

pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

pub fn select_entries(v: &DVector<f64>, rows: &[usize]) -> DVector<f64> {
    DVector::from_fn(rows.len(), |i, _| v[rows[i]])
}

/// Stack matrices vertically. All inputs must share a column count.
pub fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let ncols = blocks.iter().map(|b| b.ncols()).max().unwrap_or(0);
    let nrows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(nrows, ncols);
    let mut r = 0;
    for b in blocks {
        debug_assert!(b.nrows() == 0 || b.ncols() == ncols);
        if b.nrows() > 0 {
            out.view_mut((r, 0), (b.nrows(), b.ncols())).copy_from(*b);
        }
        r += b.nrows();
    }
    out
}

pub fn vstack_vec(blocks: &[&DVector<f64>]) -> DVector<f64> {
    let n = blocks.iter().map(|b| b.len()).sum();
    let mut out = DVector::zeros(n);
    let mut r = 0;
    for b in blocks {
        out.rows_mut(r, b.len()).copy_from(*b);
        r += b.len();
    }
    out
}

/// `diag(block, ..., block)` with `count` copies.
pub fn repeat_block_diag(block: &DMatrix<f64>, count: usize) -> DMatrix<f64> {
    let (r, c) = block.shape();
    let mut out = DMatrix::zeros(r * count, c * count);
    for k in 0..count {
        out.view_mut((k * r, k * c), (r, c)).copy_from(block);
    }
    out
}

/// Stack `count` copies of `v`.
pub fn repeat_vec(v: &DVector<f64>, count: usize) -> DVector<f64> {
    let n = v.len();
    DVector::from_fn(n * count, |i, _| v[i % n])
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol * scale))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    is_symmetric(m, 1e-9) && min_eigenvalue(m) >= -tol * m.amax().max(1.0)
}

/// Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(symmetrize(m)).ok_or(Error::NotPositiveDefinite)
}

/// Lower-triangular `F` with `F F' = cov`, clipping negative eigenvalues to
/// zero when plain Cholesky fails.
pub fn covariance_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if cov.iter().all(|&x| x == 0.0) {
        return DMatrix::zeros(cov.nrows(), cov.ncols());
    }
    let sym = symmetrize(cov);
    if let Some(ch) = Cholesky::new(sym.clone()) {
        return ch.l();
    }
    let eig = SymmetricEigen::new(sym);
    let clipped = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&clipped)
}

/// Minimum-norm pseudo-inverse through the SVD with the module rank cutoff.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.is_empty() {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let svd = SVD::new(m.clone(), true, true);
    let sigma_max = svd.singular_values.max();
    let tol = rank_tolerance(m.nrows(), m.ncols(), sigma_max);
    svd.pseudo_inverse(tol)
        .unwrap_or_else(|_| DMatrix::zeros(m.ncols(), m.nrows()))
}

/// Row-major nested vectors, the layout used in every JSON file.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Inverse of [`to_rows`]; `ncols` disambiguates matrices with no rows.
pub fn from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::dim(format!("ragged matrix rows, expected {ncols} columns")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}
