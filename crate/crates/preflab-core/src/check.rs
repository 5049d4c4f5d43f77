//! Central finite differences: the independent oracle for every gradient
//! in this crate.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Central-difference gradient of a scalar function at `theta`.
///
/// Rejects non-finite function values.
pub fn central_difference_grad<T: Real>(
    f: &mut dyn FnMut(&[T]) -> Result<T>,
    theta: &[T],
    step: T,
) -> Result<Vec<T>> {
    let mut point = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    let two = T::from_f64_c(2.0);
    for i in 0..theta.len() {
        point[i] = theta[i] + step;
        let fp = f(&point)?;
        point[i] = theta[i] - step;
        let fm = f(&point)?;
        point[i] = theta[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Domain(format!(
                "non-finite function value near coordinate {i}"
            )));
        }
        grad.push((fp - fm) / (two * step));
    }
    Ok(grad)
}

/// Compare an analytic gradient against central differences.
///
/// Returns the max over coordinates of
/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn finite_difference_check<T: Real>(
    f: &mut dyn FnMut(&[T]) -> Result<T>,
    theta: &[T],
    step: T,
    analytic: &[T],
) -> Result<T> {
    if analytic.len() != theta.len() {
        return Err(Error::InvalidArgument(format!(
            "analytic gradient has {} coordinates, point has {}",
            analytic.len(),
            theta.len()
        )));
    }
    let numeric = central_difference_grad(f, theta, step)?;
    let mut worst = T::zero();
    for (&a, &n) in analytic.iter().zip(&numeric) {
        let denom = if a.abs() > T::one() { a.abs() } else { T::one() };
        let err = (a - n).abs() / denom;
        if err > worst {
            worst = err;
        }
    }
    Ok(worst)
}

/// Default step size for the double-precision checks.
pub fn default_step<T: Real>() -> T {
    T::from_f64_c(1e-5)
}
