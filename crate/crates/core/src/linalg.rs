//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{GhsError, Result};

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for j in 0..p {
        for i in (j + 1)..p {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub(crate) fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.is_square() && m.iter().all(|v| v.is_finite()) && cholesky(m).is_some()
}

/// `log det` of a positive-definite matrix via its Cholesky factor.
pub fn log_det(m: &DMatrix<f64>) -> Result<f64> {
    let chol =
        cholesky(m).ok_or_else(|| GhsError::domain("log det of a non positive-definite matrix"))?;
    Ok(2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>())
}

pub(crate) fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol =
        cholesky(m).ok_or_else(|| GhsError::domain("inverse of a non positive-definite matrix"))?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// `tr(A B)` for symmetric `A`, without forming the product.
pub fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub(crate) fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Indices `0..p` with `skip` removed.
pub(crate) fn complement(p: usize, skip: usize) -> Vec<usize> {
    (0..p).filter(|&k| k != skip).collect()
}

pub(crate) fn gather_vec(m: &DMatrix<f64>, rows: &[usize], col: usize) -> DVector<f64> {
    DVector::from_iterator(rows.len(), rows.iter().map(|&r| m[(r, col)]))
}

pub(crate) fn gather_block(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let q = idx.len();
    DMatrix::from_fn(q, q, |a, b| m[(idx[a], idx[b])])
}
