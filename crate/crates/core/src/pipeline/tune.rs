use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{angle_net, split_buses, split_magnitude_components, NetConfig};
use crate::error::{ensure, Error, Result};
use crate::grid::NetworkCase;
use crate::metrics::{average_rmse, ResponsePair};
use crate::pipeline::{estimate_branch_flows, StateEstimate};
use crate::scenario::Samples;

#[derive(Clone, Debug, PartialEq)]
pub struct GammaChoice {
    pub gamma: f64,
    /// `(gamma, validation magnitude RMSE)` per candidate, in input order.
    pub scores: Vec<(f64, f64)>,
    /// No candidate put any bus on the network side; the choice is a purely
    /// linear magnitude model.
    pub degenerate: bool,
}

/// Pick the split threshold whose M4 magnitude components reach the lowest
/// validation average RMSE. Ties go to the larger threshold, which keeps
/// more buses linear.
pub fn tune_gamma(
    candidates: &[f64],
    train: &Samples,
    validation: &Samples,
    net: &NetConfig,
    run_seed: u64,
) -> Result<GammaChoice> {
    ensure!(!candidates.is_empty(), Error::Config("no gamma candidates".into()));
    let na = train.angles.ncols();
    let splits = candidates
        .iter()
        .map(|&g| split_buses(&train.magnitudes, g))
        .collect::<Result<Vec<_>>>()?;
    let degenerate = splits.iter().all(|s| s.big_std.is_empty());

    let scores: Vec<f64> = splits
        .par_iter()
        .map(|split| {
            let mut pred = DMatrix::zeros(validation.len(), validation.magnitudes.ncols());
            for c in split_magnitude_components(net, run_seed, train, validation, split)? {
                let p = c.model.predict(&validation.inputs)?;
                for (k, &slot) in c.outputs.iter().enumerate() {
                    pred.set_column(slot - na, &p.column(k));
                }
            }
            average_rmse(ResponsePair::new(&pred, &validation.magnitudes)?)
        })
        .collect::<Result<_>>()?;

    let mut best = 0;
    for k in 1..candidates.len() {
        let better = scores[k] < scores[best];
        let tie_larger = scores[k] == scores[best] && candidates[k] > candidates[best];
        if better || tie_larger {
            best = k;
        }
    }
    Ok(GammaChoice {
        gamma: candidates[best],
        scores: candidates.iter().copied().zip(scores).collect(),
        degenerate,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlphaChoice {
    pub alpha: f64,
    /// `(alpha, validation flow RMSE)` per candidate, in input order.
    pub scores: Vec<(f64, f64)>,
}

/// Pick the multi-task weight whose angle network gives the lowest
/// validation branch-flow error.
///
/// Flows are computed from the predicted angles and the true validation
/// magnitudes, so only the angle network is compared; the score is the mean
/// of the active and reactive average RMSE. Ties keep the earlier
/// candidate.
pub fn tune_alpha(
    candidates: &[f64],
    case: &NetworkCase,
    train: &Samples,
    validation: &Samples,
    net: &NetConfig,
    run_seed: u64,
) -> Result<AlphaChoice> {
    ensure!(!candidates.is_empty(), Error::Config("no alpha candidates".into()));
    let truth = estimate_branch_flows(case, &StateEstimate::from_samples(validation))?;
    let incidence = case.reduced_incidence();
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|&alpha| {
            let c = angle_net(net, run_seed, train, validation, Some((incidence.clone(), alpha)))?;
            let est = StateEstimate {
                angles: c.model.predict(&validation.inputs)?,
                magnitudes: validation.magnitudes.clone(),
            };
            let flows = estimate_branch_flows(case, &est)?;
            let p = average_rmse(ResponsePair::new(&flows.active, &truth.active)?)?;
            let q = average_rmse(ResponsePair::new(&flows.reactive, &truth.reactive)?)?;
            Ok((p + q) / 2.0)
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for k in 1..candidates.len() {
        if scores[k] < scores[best] {
            best = k;
        }
    }
    Ok(AlphaChoice {
        alpha: candidates[best],
        scores: candidates.iter().copied().zip(scores).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(n: usize, seed: f64) -> Samples {
        let inputs = DMatrix::from_fn(n, 2, |r, c| ((r as f64 + seed) * (c as f64 + 1.3)).sin());
        Samples {
            angles: DMatrix::from_fn(n, 1, |r, _| inputs[(r, 0)] * 0.1),
            magnitudes: DMatrix::from_element(n, 3, 1.01),
            inputs,
        }
    }

    #[test]
    fn constant_magnitudes_go_linear() {
        let net = NetConfig {
            hidden: vec![4],
            epochs: 2,
            ..Default::default()
        };
        let (train, val) = (samples(20, 0.0), samples(10, 100.0));
        let choice = tune_gamma(&[1e-4, 1e-3, 1e-2], &train, &val, &net, 0).unwrap();
        assert!(choice.degenerate);
        assert_eq!(choice.gamma, 1e-2);
        assert!(choice.scores.iter().all(|&(_, s)| s < 1e-15));

        let single = tune_gamma(&[5e-3], &train, &val, &net, 0).unwrap();
        assert_eq!(single.gamma, 5e-3);
        assert!(tune_gamma(&[], &train, &val, &net, 0).is_err());
    }
}
