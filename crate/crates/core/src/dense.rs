//! Small dense helpers for reference computations on toy-sized systems.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};

use crate::error::{Error, Result};

fn to_mat(a: &[Vec<f64>]) -> Mat<f64> {
    let n = a.len();
    Mat::from_fn(n, n, |i, j| a[i][j])
}

/// Solves `a x = b` for symmetric positive definite `a` by a dense Cholesky
/// factorization.
pub fn cholesky_solve(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    let n = a.len();
    assert_eq!(b.len(), n, "rhs length");
    let llt = to_mat(a)
        .llt(Side::Lower)
        .map_err(|e| Error::Factorization(format!("dense cholesky: {e:?}")))?;
    let rhs = Mat::from_fn(n, 1, |i, _| b[i]);
    let x = llt.solve(&rhs);
    Ok((0..n).map(|i| x[(i, 0)]).collect())
}

/// Eigenvalues of a symmetric matrix in nondecreasing order.
pub fn symmetric_eigenvalues(a: &[Vec<f64>]) -> Result<Vec<f64>> {
    to_mat(a)
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Factorization(format!("dense eigensolver: {e:?}")))
}
