//! Central finite differences — the independent gradient oracle used by the
//! test suites to check the analytic backward passes.

use crate::error::{Result, SocoError};

/// Central-difference gradient estimate of a scalar function, one coordinate
/// at a time.
pub fn finite_diff_grad<F>(f: &mut F, point: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(SocoError::Invalid(format!(
            "finite_diff_grad requires h > 0, got {h}"
        )));
    }
    let mut x = point.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x)?;
        x[i] = orig - h;
        let fm = f(&x)?;
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(SocoError::non_finite("finite_diff_grad function value"));
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}
