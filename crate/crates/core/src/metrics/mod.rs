//! Accuracy of estimated output distributions against Monte Carlo ground
//! truth.
//!
//! Every metric takes an `n × d` estimate and truth pair, scores each of
//! the `d` response columns and averages over them:
//!
//! * average RMSE, `(1/d) Σᵢ √((1/n) Σₖ (Ōₖᵢ − Oₖᵢ)²)`;
//! * average Wasserstein distance, the mean over columns of the
//!   first-order Wasserstein distance between the empirical distributions
//!   of estimate and truth;
//! * mean and standard-deviation errors `e1 = (1/d) Σᵢ |μ̄ᵢ − μᵢ|`,
//!   `e2 = (1/d) Σᵢ |σ̄ᵢ − σᵢ|`, with sample standard deviations.

mod report;

pub use report::{wd_csv, EvalReport, Quantity, ReportRow, CSV_HEADER};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Estimate and ground truth with matching shapes.
#[derive(Clone, Copy, Debug)]
pub struct ResponsePair<'a> {
    pub estimate: &'a DMatrix<f64>,
    pub truth: &'a DMatrix<f64>,
}

impl<'a> ResponsePair<'a> {
    pub fn new(estimate: &'a DMatrix<f64>, truth: &'a DMatrix<f64>) -> Result<Self> {
        ensure!(
            estimate.shape() == truth.shape(),
            Error::Contract(format!(
                "estimate is {:?} but truth is {:?}",
                estimate.shape(),
                truth.shape()
            ))
        );
        ensure!(
            estimate.iter().chain(truth.iter()).all(|v| v.is_finite()),
            Error::Contract("metric inputs must be finite".into())
        );
        Ok(ResponsePair { estimate, truth })
    }

    pub fn n_responses(&self) -> usize {
        self.truth.ncols()
    }

    pub fn n_samples(&self) -> usize {
        self.truth.nrows()
    }
}

fn average(values: impl Iterator<Item = f64>, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        values.sum::<f64>() / d as f64
    }
}

pub fn average_rmse(pair: ResponsePair) -> Result<f64> {
    let n = pair.n_samples();
    ensure!(n >= 1, Error::Contract("RMSE needs at least one sample".into()));
    let per_column = pair
        .estimate
        .column_iter()
        .zip(pair.truth.column_iter())
        .map(|(e, t)| ((e - t).norm_squared() / n as f64).sqrt());
    Ok(average(per_column, pair.n_responses()))
}

/// First-order Wasserstein distance between two empirical distributions.
///
/// Equal sample counts pair the order statistics; otherwise the absolute
/// difference of the two step CDFs is integrated over the merged support.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    ensure!(
        !a.is_empty() && !b.is_empty(),
        Error::Contract("Wasserstein distance needs non-empty samples".into())
    );
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        let total: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        return Ok(total / a.len() as f64);
    }

    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut x = a[0].min(b[0]);
    let mut dist = 0.0;
    while i < a.len() || j < b.len() {
        // advance past every sample equal to x
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        let next = match (a.get(i), b.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => break,
        };
        dist += (i as f64 / na - j as f64 / nb).abs() * (next - x);
        x = next;
    }
    Ok(dist)
}

/// Average Wasserstein distance and the per-column distances.
pub fn awd(pair: ResponsePair) -> Result<(f64, Vec<f64>)> {
    ensure!(pair.n_samples() >= 1, Error::Contract("AWD needs at least one sample".into()));
    let per_column: Vec<f64> = (0..pair.n_responses())
        .into_par_iter()
        .map(|c| {
            let e: Vec<f64> = pair.estimate.column(c).iter().copied().collect();
            let t: Vec<f64> = pair.truth.column(c).iter().copied().collect();
            wasserstein1(&e, &t)
        })
        .collect::<Result<_>>()?;
    Ok((average(per_column.iter().copied(), per_column.len()), per_column))
}

fn mean_and_sample_std(col: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = col.clone().sum::<f64>() / n as f64;
    let var = col.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Mean absolute errors of the column means and sample standard deviations.
pub fn moment_maes(pair: ResponsePair) -> Result<(f64, f64)> {
    let n = pair.n_samples();
    ensure!(n >= 2, Error::Contract("moment errors need at least two samples".into()));
    let (mut e1, mut e2) = (0.0, 0.0);
    for (e, t) in pair.estimate.column_iter().zip(pair.truth.column_iter()) {
        let (me, se) = mean_and_sample_std(e.iter().copied(), n);
        let (mt, st) = mean_and_sample_std(t.iter().copied(), n);
        e1 += (me - mt).abs();
        e2 += (se - st).abs();
    }
    let d = pair.n_responses().max(1) as f64;
    Ok((e1 / d, e2 / d))
}

/// All metric families for one response matrix pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub avg_rmse: f64,
    pub awd: f64,
    pub e1: f64,
    pub e2: f64,
    pub per_response_wd: Vec<f64>,
}

impl MetricsReport {
    pub fn compute(pair: ResponsePair) -> Result<Self> {
        let (awd, per_response_wd) = awd(pair)?;
        let (e1, e2) = moment_maes(pair)?;
        Ok(MetricsReport {
            avg_rmse: average_rmse(pair)?,
            awd,
            e1,
            e2,
            per_response_wd,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Integrates |F_a − F_b| between consecutive support points, counting
    /// samples afresh for every interval.
    fn cdf_oracle(a: &[f64], b: &[f64]) -> f64 {
        let mut pts: Vec<f64> = a.iter().chain(b).copied().collect();
        pts.sort_by(f64::total_cmp);
        let cdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
        pts.windows(2).map(|w| (cdf(a, w[0]) - cdf(b, w[0])).abs() * (w[1] - w[0])).sum()
    }

    #[test]
    fn hand_examples() {
        assert_eq!(wasserstein1(&[0.0, 2.0], &[1.0, 3.0]).unwrap(), 1.0);
        assert_eq!(wasserstein1(&[0.0, 0.0, 0.0, 4.0], &[1.0, 1.0, 1.0, 1.0]).unwrap(), 1.5);
        assert_eq!(cdf_oracle(&[0.0, 0.0, 0.0, 4.0], &[1.0, 1.0, 1.0, 1.0]), 1.5);
        assert_eq!(wasserstein1(&[2.0, 1.0, 3.0], &[3.0, 1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn unequal_sizes() {
        // F_a jumps to 1 at 0; F_b is 1/2 on [0, 2)
        assert_eq!(wasserstein1(&[0.0], &[0.0, 2.0]).unwrap(), 1.0);
        assert!(matches!(wasserstein1(&[], &[1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn rmse_examples() {
        let e = DMatrix::from_column_slice(2, 1, &[3.0, 4.0]);
        let t = DMatrix::zeros(2, 1);
        let r = average_rmse(ResponsePair::new(&e, &t).unwrap()).unwrap();
        assert!((r - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(average_rmse(ResponsePair::new(&t, &t).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset() {
        let t = DMatrix::from_fn(5, 3, |r, c| (r * r) as f64 - c as f64 * 0.5);
        let e = t.map(|v| v + 0.25);
        let m = MetricsReport::compute(ResponsePair::new(&e, &t).unwrap()).unwrap();
        assert_eq!(m.avg_rmse, 0.25);
        assert_eq!(m.awd, 0.25);
        assert!((m.e1 - 0.25).abs() < 1e-15);
        assert!(m.e2 < 1e-15);
    }

    #[test]
    fn doubling_spread() {
        let t = DMatrix::from_fn(6, 2, |r, c| (r as f64).sin() * (c + 1) as f64);
        let mut e = t.clone();
        let mut sigma = 0.0;
        for (mut ec, tc) in e.column_iter_mut().zip(t.column_iter()) {
            let (mu, s) = mean_and_sample_std(tc.iter().copied(), 6);
            sigma += s / 2.0;
            ec.apply(|v| *v = 2.0 * (*v - mu) + mu);
        }
        let (e1, e2) = moment_maes(ResponsePair::new(&e, &t).unwrap()).unwrap();
        assert!(e1 < 1e-15);
        assert!((e2 - sigma).abs() < 1e-14);
    }

    #[test]
    fn shape_mismatch() {
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::zeros(2, 3);
        assert!(matches!(ResponsePair::new(&a, &b), Err(Error::Contract(_))));
        let one = DMatrix::zeros(1, 2);
        assert!(matches!(moment_maes(ResponsePair::new(&one, &one).unwrap()), Err(Error::Contract(_))));
    }

    fn samples() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, 1..30)
    }

    proptest! {
        #[test]
        fn matches_cdf_oracle(a in samples(), b in samples()) {
            let w = wasserstein1(&a, &b).unwrap();
            prop_assert!((w - cdf_oracle(&a, &b)).abs() < 1e-12);
        }

        #[test]
        fn metric_axioms(a in samples(), b in samples(), c in samples()) {
            let ab = wasserstein1(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, wasserstein1(&b, &a).unwrap());
            prop_assert_eq!(wasserstein1(&a, &a).unwrap(), 0.0);
            let ac = wasserstein1(&a, &c).unwrap();
            let cb = wasserstein1(&c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-10);
        }

        #[test]
        fn translation(a in samples(), b in samples(), shift in -5.0f64..5.0) {
            let moved: Vec<f64> = a.iter().map(|v| v + shift).collect();
            // exact up to the rounding of the shifted samples themselves
            prop_assert!((wasserstein1(&a, &moved).unwrap() - shift.abs()).abs() < 1e-12);
            let before = wasserstein1(&a, &b).unwrap();
            let after = wasserstein1(&moved, &b).unwrap();
            prop_assert!((after - before).abs() <= shift.abs() + 1e-12);
        }

        #[test]
        fn rmse_bounds_mean_error(vals in prop::collection::vec(-3.0f64..3.0, 12), offs in prop::collection::vec(-1.0f64..1.0, 12)) {
            let t = DMatrix::from_column_slice(4, 3, &vals);
            let e = DMatrix::from_fn(4, 3, |r, c| t[(r, c)] + offs[c * 4 + r]);
            for c in 0..3 {
                let et = DMatrix::from_column_slice(4, 1, e.column(c).as_slice());
                let tt = DMatrix::from_column_slice(4, 1, t.column(c).as_slice());
                let pair = ResponsePair::new(&et, &tt).unwrap();
                let (e1, _) = moment_maes(pair).unwrap();
                prop_assert!(average_rmse(pair).unwrap() + 1e-15 >= e1);
            }
        }
    }
}
