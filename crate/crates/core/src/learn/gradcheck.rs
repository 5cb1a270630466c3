use nalgebra::DMatrix;

use super::{LossSpec, MlpModel};
use crate::error::{ensure, Error, Result};

/// Largest model the finite-difference check accepts.
pub const MAX_CHECK_PARAMS: usize = 10_000;

const STEP: f64 = 1e-6;

/// Gradients below this magnitude are compared in absolute terms, since
/// central differences cannot resolve them relatively.
const REL_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub n_params: usize,
    /// Smallest hidden pre-activation magnitude on the probe batch. Values
    /// near zero put a ReLU kink inside the difference stencil, where the
    /// comparison is meaningless.
    pub min_abs_preactivation: f64,
}

/// Compare the backpropagated gradient of `loss` at a probe batch (in
/// standardized units) against central differences with step `1e-6`.
///
/// The relative error of one parameter is
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-5)`.
pub fn grad_check(
    model: &MlpModel,
    loss: &LossSpec,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
) -> Result<GradCheckReport> {
    let n_params = model.n_params();
    ensure!(
        n_params <= MAX_CHECK_PARAMS,
        Error::Config(format!("gradient check is limited to {MAX_CHECK_PARAMS} parameters, model has {n_params}"))
    );
    let (pred, cache) = model.forward_cached(inputs);
    let analytic = model.backward(&cache, &loss.eval(&pred, targets)?.grad).flatten();

    let mut probe = model.clone();
    let value_at = |m: &MlpModel| -> Result<f64> { Ok(loss.eval(&m.forward_standardized(inputs), targets)?.value) };
    let mut worst = 0.0f64;
    let mut k = 0;
    for block in 0..2 * model.layers.len() {
        let len = probe.param_blocks_mut()[block].len();
        for i in 0..len {
            let orig = probe.param_blocks_mut()[block][i];
            probe.param_blocks_mut()[block][i] = orig + STEP;
            let up = value_at(&probe)?;
            probe.param_blocks_mut()[block][i] = orig - STEP;
            let down = value_at(&probe)?;
            probe.param_blocks_mut()[block][i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(rel);
            k += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        n_params,
        min_abs_preactivation: cache.min_abs_preactivation(),
    })
}
