use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::scalar::Scalar;

/// Relative singular-value cutoff used when no tolerance is given.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

pub(crate) fn to_nalgebra<T: Scalar>(a: &DenseMatrix<T>) -> DMatrix<f64> {
    DMatrix::from_row_iterator(a.rows(), a.cols(), a.data().iter().map(|v| v.to_f64()))
}

/// Singular values in descending order.
pub fn singular_values<T: Scalar>(a: &DenseMatrix<T>) -> Result<Vec<f64>> {
    if a.rows() == 0 || a.cols() == 0 {
        return Ok(Vec::new());
    }
    let svd = nalgebra::linalg::SVD::try_new(to_nalgebra(a), false, false, f64::EPSILON, 200 * (a.rows() + a.cols()))
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    Ok(s)
}

/// Number of singular values above `tol` times the largest one.
pub fn numerical_rank<T: Scalar>(a: &DenseMatrix<T>, tol: f64) -> Result<usize> {
    if !(tol > 0.0) {
        return Err(Error::Invalid(format!("rank tolerance must be positive, got {tol}")));
    }
    let s = singular_values(a)?;
    let Some(&largest) = s.first() else {
        return Ok(0);
    };
    if largest == 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&v| v > tol * largest).count())
}
