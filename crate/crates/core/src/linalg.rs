//! Small dense linear-algebra helpers over nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solves `a x = b` by partial-pivot LU.
pub(crate) fn solve(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = a.nrows();
    let lu = a.lu();
    let x = lu
        .solve(b)
        .ok_or_else(|| Error::Numerical(format!("singular {n}x{n} linear system")))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "{n}x{n} linear system produced non-finite solution"
        )));
    }
    Ok(x)
}

/// Solves the symmetric positive semi-definite system `a x = b`.
///
/// Cholesky first; if that fails the SVD pseudo-inverse is used and the
/// second element of the result is `true`.
pub(crate) fn solve_psd(a: DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
    if let Some(ch) = a.clone().cholesky() {
        let x = ch.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok((x, false));
        }
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * 1e-12 * svd.singular_values.len() as f64;
    let x = svd
        .solve(b, eps)
        .map_err(|e| Error::Numerical(format!("pseudo-inverse failed: {e}")))?;
    Ok((x, true))
}

/// Ratio of extreme singular values (infinite when singular).
pub(crate) fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
