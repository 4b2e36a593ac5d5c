use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dense LU solve with partial pivoting followed by one round of iterative
/// refinement.
pub(crate) fn solve_dense(matrix: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    let lu = matrix.clone().lu();
    let mut x = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular linear system".into()))?;
    let residual = &rhs - &matrix * &x;
    if let Some(correction) = lu.solve(&residual) {
        x += correction;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("linear solve produced non-finite values".into()));
    }
    Ok(x)
}
