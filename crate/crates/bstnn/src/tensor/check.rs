//! Numerical gradient verification.
//!
//! Central finite differences provide an implementation-independent reference
//! for every analytic gradient in the crate. The comparison is relative, with
//! a floor on the denominator so that near-zero gradients are judged on an
//! absolute scale instead of blowing up the ratio.

use super::Tensor;
use crate::error::{Error, Result};

/// Step used by the central difference `(f(x+h) - f(x-h)) / 2h`.
pub const FD_STEP: f64 = 1e-5;

/// Largest allowed relative disagreement between analytic and numeric
/// gradients.
pub const GRAD_RTOL: f64 = 1e-6;

/// Denominator floor of the relative comparison: components whose magnitudes
/// sit below this are compared on an absolute scale.
pub const GRAD_DENOM_FLOOR: f64 = 1e-2;

/// Central-difference gradient of `f` with respect to every element of every
/// input tensor.
pub fn central_difference<F>(f: &F, inputs: &[Tensor], h: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    let mut grads = Vec::with_capacity(inputs.len());
    for (which, input) in inputs.iter().enumerate() {
        let mut grad = vec![0.0; input.len()];
        for i in 0..input.len() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            let mut d_plus = input.data().to_vec();
            let mut d_minus = input.data().to_vec();
            d_plus[i] += h;
            d_minus[i] -= h;
            plus[which] = Tensor::new(input.shape().to_vec(), d_plus)?;
            minus[which] = Tensor::new(input.shape().to_vec(), d_minus)?;
            grad[i] = (f(&plus)? - f(&minus)?) / (2.0 * h);
        }
        grads.push(Tensor::new(input.shape().to_vec(), grad)?);
    }
    Ok(grads)
}

/// Relative error between two gradient components.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_DENOM_FLOOR)
}

/// Largest relative error over all components of all gradient pairs.
pub fn compare_gradients(analytic: &[Tensor], numeric: &[Tensor]) -> Result<f64> {
    if analytic.len() != numeric.len() {
        return Err(Error::Contract(format!(
            "gradient lists differ in length: {} vs {}",
            analytic.len(),
            numeric.len()
        )));
    }
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric.iter()) {
        if a.shape() != n.shape() {
            return Err(Error::Shape(format!(
                "gradient shapes differ: {:?} vs {:?}",
                a.shape(),
                n.shape()
            )));
        }
        for (&x, &y) in a.data().iter().zip(n.data().iter()) {
            worst = worst.max(relative_error(x, y));
        }
    }
    Ok(worst)
}
