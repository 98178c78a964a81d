//! Central finite differences, the reference for every hand-written backward pass.

use serde::Serialize;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` for every element `i` of `x`.
pub fn finite_diff_grad<Fun>(mut f: Fun, x: &Tensor<f64>, eps: f64) -> Result<Tensor<f64>>
where
    Fun: FnMut(&Tensor<f64>) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid(format!(
            "finite difference step must be positive, got {eps}"
        )));
    }
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite {
                op: "finite_diff_grad",
            });
        }
        grad.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    Ok(grad)
}

/// Relative error used by all gradient audits: `|a - n| / max(|a|, |n|, floor)`.
///
/// The floor keeps entries whose true gradient is ~0 from turning rounding
/// noise into huge ratios.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradComparison {
    pub name: String,
    pub elements: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

impl GradComparison {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

pub const DEFAULT_FLOOR: f64 = 1e-6;

/// Step used by the gradient audits. Small enough that truncation error is
/// negligible, large enough that cancellation stays well under the tolerance.
pub const AUDIT_EPS: f64 = 1e-4;

pub fn compare_grads(
    name: &str,
    analytic: &Tensor<f64>,
    numeric: &Tensor<f64>,
) -> Result<GradComparison> {
    if analytic.shape() != numeric.shape() {
        return Err(Error::shape(
            "compare_grads",
            analytic.shape(),
            numeric.shape(),
        ));
    }
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
        max_rel = max_rel.max(relative_error(a, n, DEFAULT_FLOOR));
        max_abs = max_abs.max((a - n).abs());
    }
    Ok(GradComparison {
        name: name.to_string(),
        elements: analytic.len(),
        max_rel_err: max_rel,
        max_abs_err: max_abs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let x = Tensor::from_f64(&[1], &[3.0]).unwrap();
        let g = finite_diff_grad(|t| Ok(t.data()[0] * t.data()[0]), &x, 1e-5).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let x = Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap();
        let g = finite_diff_grad(|_| Ok(4.2), &x, 1e-4).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_step_and_non_finite() {
        let x = Tensor::from_f64(&[1], &[1.0]).unwrap();
        assert!(finite_diff_grad(|_| Ok(0.0), &x, 0.0).is_err());
        assert!(finite_diff_grad(|_| Ok(f64::NAN), &x, 1e-3).is_err());
    }
}
