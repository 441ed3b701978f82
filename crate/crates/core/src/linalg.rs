//! Small dense linear-algebra helpers shared by the estimators.

use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{Error, Result};

/// Smallest eigenvalue accepted for a system matrix that must be invertible.
pub const MIN_EIGENVALUE: f64 = 1e-12;
/// Largest accepted condition number for symmetric positive-definite solves.
pub const MAX_CONDITION: f64 = 1e12;

/// Symmetric eigendecomposition with eigenvalues sorted non-increasing.
///
/// The input is symmetrized before decomposition; eigenvector `i` is column
/// `i` of the returned matrix.
pub fn symmetric_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = symmetrize(m);
    let eig = sym.symmetric_eigen();
    let p = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(p, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(p, p, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest eigenvalue of a symmetric matrix (0 for an empty matrix).
pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Cholesky factor of a symmetric positive-definite matrix whose conditioning
/// was checked before factorization.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    condition: f64,
}

impl SpdFactor {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                context: "SPD factorization (square matrix)",
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let sym = symmetrize(m);
        let eigenvalues = sym.clone().symmetric_eigenvalues();
        let min = eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        let max = eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(min > MIN_EIGENVALUE) {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
        }
        let condition = max / min;
        if condition > MAX_CONDITION {
            return Err(Error::IllConditioned { condition });
        }
        let chol = sym
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { min_eigenvalue: min })?;
        Ok(SpdFactor { chol, condition })
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }
}

pub fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `‖a − b‖_F / ‖b‖_F`, or the absolute error when `b` is zero.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// `c ← α·op(a)·op(b) + β·c`, where `op` transposes when the flag is set.
///
/// Transposition is expressed through strides, so no copies are made.
pub fn gemm(c: &mut DMatrix<f64>, alpha: f64, a: &DMatrix<f64>, trans_a: bool, b: &DMatrix<f64>, trans_b: bool, beta: f64) {
    let strides = |m: &DMatrix<f64>, t: bool| {
        let (rs, cs) = (1isize, m.nrows() as isize);
        if t {
            (m.ncols(), m.nrows(), cs, rs)
        } else {
            (m.nrows(), m.ncols(), rs, cs)
        }
    };
    let (m, k, rsa, csa) = strides(a, trans_a);
    let (kb, n, rsb, csb) = strides(b, trans_b);
    assert!(k == kb && c.nrows() == m && c.ncols() == n, "gemm: dimension mismatch");
    if m == 0 || n == 0 {
        return;
    }
    let csc = c.nrows() as isize;
    // SAFETY: the pointers cover matrices whose shapes and strides were checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            1,
            csc,
        );
    }
}

/// Rows of `m` listed in `rows`, in that order.
pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

/// Columns of `m` listed in `cols`, in that order.
pub fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}
