use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Partition of the load buses by the spread of their voltage magnitudes.
///
/// Indices are positions in the load-bus (magnitude column) order. A bus
/// whose sample standard deviation is at most `gamma` goes to `small_std`
/// and is fitted linearly; the rest go to `big_std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BusSplit {
    pub small_std: Vec<usize>,
    pub big_std: Vec<usize>,
    pub gamma: f64,
    pub per_bus_std: Vec<f64>,
}

/// Sample standard deviation (divisor `n − 1`) of every column.
pub fn column_std(data: &DMatrix<f64>) -> Vec<f64> {
    let n = data.nrows();
    data.column_iter()
        .map(|col| {
            let mean = col.sum() / n as f64;
            (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        })
        .collect()
}

/// Split load buses by the standard deviation of their training-set
/// magnitudes.
pub fn split_buses(train_magnitudes: &DMatrix<f64>, gamma: f64) -> Result<BusSplit> {
    ensure!(
        gamma >= 0.0,
        Error::Config(format!("gamma must be non-negative, got {gamma}"))
    );
    ensure!(
        train_magnitudes.nrows() >= 2,
        Error::Contract("bus split needs at least two training rows".into())
    );
    Ok(split_from_std(column_std(train_magnitudes), gamma))
}

pub(crate) fn split_from_std(per_bus_std: Vec<f64>, gamma: f64) -> BusSplit {
    let (small_std, big_std) = (0..per_bus_std.len()).partition(|&b| per_bus_std[b] <= gamma);
    BusSplit {
        small_std,
        big_std,
        gamma,
        per_bus_std,
    }
}
