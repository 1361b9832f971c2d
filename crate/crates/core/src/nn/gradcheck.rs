//! Central-difference gradient verification.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default finite-difference step.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Outcome of a gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `max_i |analytic - numeric| / max(1e-12, |analytic| + |numeric|)`
    pub max_rel_error: f64,
    /// Coordinate that attained the maximum.
    pub worst_index: usize,
    pub checked: usize,
}

/// Relative error used for gradient comparisons.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

/// Compares `analytic` against `(f(θ + eps e_i) - f(θ - eps e_i)) / (2 eps)`.
///
/// `coords` restricts the check to a subset of flat indices; `None` checks
/// every coordinate.
pub fn gradient_check<F>(
    mut f: F,
    params: &Tensor<f64>,
    analytic: &Tensor<f64>,
    eps: f64,
    coords: Option<&[usize]>,
) -> Result<GradCheck>
where
    F: FnMut(&Tensor<f64>) -> Result<f64>,
{
    if params.shape() != analytic.shape() {
        return Err(Error::shape(format!(
            "parameters {:?} vs gradient {:?}",
            params.shape(),
            analytic.shape()
        )));
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let mut theta = params.clone();
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        checked: 0,
    };
    for &i in coords {
        let orig = theta.data()[i];
        theta.data_mut()[i] = orig + eps;
        let plus = f(&theta)?;
        theta.data_mut()[i] = orig - eps;
        let minus = f(&theta)?;
        theta.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numerics(format!("objective not finite at coordinate {i}")));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let err = relative_error(analytic.data()[i], numeric);
        if err > worst.max_rel_error {
            worst.max_rel_error = err;
            worst.worst_index = i;
        }
        worst.checked += 1;
    }
    Ok(worst)
}
