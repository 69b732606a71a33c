use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::metrics::ssim_with_grad;

/// Weights of the L1, SSIM and binarisation terms of the training loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w1: 0.2, w2: 0.8, w3: 16.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.w1, self.w2, self.w3].iter().all(|w| w.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid("loss weights must be finite"))
        }
    }
}

fn same_len<T>(x: &[T], xhat: &[T]) -> Result<()> {
    if x.len() != xhat.len() || x.is_empty() {
        return Err(Error::invalid(format!("loss inputs differ in length: {} vs {}", x.len(), xhat.len())));
    }
    Ok(())
}

/// Mean absolute error.
pub fn l1_loss<T: Scalar>(x: &[T], xhat: &[T]) -> Result<f64> {
    same_len(x, xhat)?;
    Ok(x.iter().zip(xhat).map(|(a, b)| (a.as_f64() - b.as_f64()).abs()).sum::<f64>() / x.len() as f64)
}

/// L1 loss and its gradient with respect to `xhat` (zero at ties).
pub fn l1_loss_grad<T: Scalar>(x: &[T], xhat: &[T]) -> Result<(f64, Vec<T>)> {
    let value = l1_loss(x, xhat)?;
    let inv = 1.0 / x.len() as f64;
    let grad = x
        .iter()
        .zip(xhat)
        .map(|(a, b)| {
            let d = b.as_f64() - a.as_f64();
            T::cast_from(if d > 0.0 {
                inv
            } else if d < 0.0 {
                -inv
            } else {
                0.0
            })
        })
        .collect();
    Ok((value, grad))
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|a| a.as_f64()).collect()
}

/// `1 - SSIM(x, xhat)` for square images of the given side.
pub fn ssim_loss<T: Scalar>(x: &[T], xhat: &[T], side: usize) -> Result<f64> {
    Ok(ssim_loss_grad(x, xhat, side)?.0)
}

/// SSIM loss and its gradient with respect to `xhat`.
pub fn ssim_loss_grad<T: Scalar>(x: &[T], xhat: &[T], side: usize) -> Result<(f64, Vec<T>)> {
    same_len(x, xhat)?;
    let (s, g) = ssim_with_grad(&to_f64(x), &to_f64(xhat), side)?;
    Ok((1.0 - s, g.into_iter().map(|v| T::cast_from(-v)).collect()))
}

/// `(lambda / mn) * sum (e - 1)^2 e^2` over all entries of `e`.
pub fn binarisation_penalty<T: Scalar>(e: &Tensor<T>, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be non-negative, got {lambda}")));
    }
    let sum: f64 = e
        .data()
        .iter()
        .map(|v| {
            let v = v.as_f64();
            let d = v * (v - 1.0);
            d * d
        })
        .sum();
    Ok(lambda * (sum / e.len() as f64))
}

/// Gradient of [`binarisation_penalty`]: `(lambda / mn) * 2 e (e - 1)(2e - 1)`.
pub fn binarisation_penalty_grad<T: Scalar>(e: &Tensor<T>, lambda: f64) -> Result<Vec<T>> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be non-negative, got {lambda}")));
    }
    let scale = lambda / e.len() as f64;
    Ok(e
        .data()
        .iter()
        .map(|v| {
            let v = v.as_f64();
            T::cast_from(scale * 2.0 * v * (v - 1.0) * (2.0 * v - 1.0))
        })
        .collect())
}
