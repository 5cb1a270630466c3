//! Regression losses over `b × d` prediction batches.
//!
//! Both terms of the multi-task loss are means over batch and response
//! dimensions:
//!
//! ```text
//! L = 1/(b·d) Σ e²  +  α · 1/(b·M) Σ (e Aᵀ)²        e = pred − truth
//! ∂L/∂pred = 2/(b·d) · e  +  2α/(b·M) · (e Aᵀ) A
//! ```
//!
//! where `A` is the `M × d` reduced incidence matrix, so each row of
//! `e Aᵀ` holds the angle-difference errors of one sample.

use nalgebra::DMatrix;

use crate::error::{ensure, Error, Result};

/// Loss value and its gradient with respect to the predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub grad: DMatrix<f64>,
}

/// Which loss a network is trained on.
#[derive(Clone, Debug, PartialEq)]
pub enum LossSpec {
    Mse,
    MultiTask { incidence: DMatrix<f64>, alpha: f64 },
}

impl LossSpec {
    pub fn eval(&self, pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<LossEval> {
        match self {
            LossSpec::Mse => mse(pred, truth),
            LossSpec::MultiTask { incidence, alpha } => multitask_loss(pred, truth, incidence, *alpha),
        }
    }
}

fn check_shapes(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<()> {
    ensure!(
        pred.shape() == truth.shape(),
        Error::Contract(format!(
            "prediction is {:?} but target is {:?}",
            pred.shape(),
            truth.shape()
        ))
    );
    Ok(())
}

/// Mean squared error over every entry.
pub fn mse(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<LossEval> {
    check_shapes(pred, truth)?;
    let count = pred.len().max(1) as f64;
    let err = pred - truth;
    let value = err.norm_squared() / count;
    let grad = err * (2.0 / count);
    Ok(LossEval { value, grad })
}

/// Angle MSE plus `alpha` times the MSE of the implied branch angle
/// differences. With `alpha == 0` the result is exactly [`mse`].
pub fn multitask_loss(
    pred: &DMatrix<f64>,
    truth: &DMatrix<f64>,
    incidence: &DMatrix<f64>,
    alpha: f64,
) -> Result<LossEval> {
    ensure!(
        alpha >= 0.0 && alpha.is_finite(),
        Error::Config(format!("multi-task weight must be non-negative, got {alpha}"))
    );
    check_shapes(pred, truth)?;
    ensure!(
        incidence.ncols() == pred.ncols(),
        Error::Contract(format!(
            "incidence matrix has {} columns for {} angles",
            incidence.ncols(),
            pred.ncols()
        ))
    );
    let plain = mse(pred, truth)?;
    if alpha == 0.0 {
        return Ok(plain);
    }
    let err = pred - truth;
    let diff = &err * incidence.transpose();
    let count = diff.len().max(1) as f64;
    let value = plain.value + alpha * diff.norm_squared() / count;
    let grad = plain.grad + (diff * incidence) * (2.0 * alpha / count);
    Ok(LossEval { value, grad })
}
