//! Small dense kernels shared by the solver and the diagnostics.
//!
//! Matrices are `nalgebra::DMatrix<f64>`, which is column-major, so a column is
//! a contiguous slice of the backing storage.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Gram matrices with a condition number above this are treated as singular.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

#[inline]
pub fn column(x: &DMatrix<f64>, j: usize) -> &[f64] {
    let n = x.nrows();
    &x.as_slice()[j * n..(j + 1) * n]
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// `Xᵀ v` computed column by column.
pub fn xt_times(x: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (0..x.ncols()).map(|j| dot(column(x, j), v)).collect()
}

/// Columns of `x` listed in `cols`, in that order.
pub fn select_columns(x: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    let n = x.nrows();
    let mut out = DMatrix::zeros(n, cols.len());
    for (k, &j) in cols.iter().enumerate() {
        out.column_mut(k).copy_from_slice(column(x, j));
    }
    out
}

/// Symmetric positive-definite Gram matrix of a column subset, with its
/// eigenvalue range and a Cholesky factor for solves.
pub struct SupportGram {
    pub gram: DMatrix<f64>,
    pub eig_min: f64,
    pub eig_max: f64,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl SupportGram {
    pub fn new(xs: &DMatrix<f64>) -> Result<Self> {
        let gram = xs.tr_mul(xs);
        let eig = SymmetricEigen::new(gram.clone());
        let eig_min = eig.eigenvalues.min();
        let eig_max = eig.eigenvalues.max();
        if !(eig_max > 0.0) || eig_min <= 0.0 || eig_max / eig_min > MAX_GRAM_CONDITION {
            let condition = if eig_min > 0.0 { eig_max / eig_min } else { f64::INFINITY };
            return Err(Error::SingularGram { condition });
        }
        let chol = nalgebra::Cholesky::new(gram.clone()).ok_or(Error::SingularGram {
            condition: eig_max / eig_min,
        })?;
        Ok(SupportGram {
            gram,
            eig_min,
            eig_max,
            chol,
        })
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }
}
