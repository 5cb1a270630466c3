use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Smallest scale a column can be divided by.
pub const STD_FLOOR: f64 = 1e-12;

/// Affine per-column map `z = (x − mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Mean and population standard deviation of every column.
    pub fn fit(data: &DMatrix<f64>) -> Self {
        let (mean, var) = column_moments(data);
        Standardizer {
            mean,
            std: var.into_iter().map(|v| v.sqrt().max(STD_FLOOR)).collect(),
        }
    }

    /// Per-column means with one scale shared by all columns, the root of the
    /// average column variance.
    ///
    /// Squared errors in the standardized space are then the physical ones
    /// divided by a single constant, so losses that mix columns (such as
    /// angle differences) keep their physical proportions.
    pub fn fit_shared_scale(data: &DMatrix<f64>) -> Self {
        let (mean, var) = column_moments(data);
        let d = var.len().max(1) as f64;
        let s = (var.iter().sum::<f64>() / d).sqrt().max(STD_FLOOR);
        Standardizer {
            std: vec![s; mean.len()],
            mean,
        }
    }

    /// A single mean and standard deviation over every entry of the matrix.
    pub fn fit_pooled(data: &DMatrix<f64>) -> Self {
        let d = data.ncols();
        let n = data.len();
        let (mean, std) = if n == 0 {
            (0.0, 1.0)
        } else {
            let mean = data.iter().sum::<f64>() / n as f64;
            let var = data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            (mean, var.sqrt().max(STD_FLOOR))
        };
        Standardizer {
            mean: vec![mean; d],
            std: vec![std; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(data)?;
        let mut out = data.clone();
        for (c, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.mean[c], self.std[c]);
            col.apply(|v| *v = (*v - m) / s);
        }
        Ok(out)
    }

    pub fn invert(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(data)?;
        let mut out = data.clone();
        for (c, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.mean[c], self.std[c]);
            col.apply(|v| *v = *v * s + m);
        }
        Ok(out)
    }

    fn check(&self, data: &DMatrix<f64>) -> Result<()> {
        ensure!(
            data.ncols() == self.dim(),
            Error::Contract(format!(
                "standardizer has {} columns, data has {}",
                self.dim(),
                data.ncols()
            ))
        );
        Ok(())
    }
}

fn column_moments(data: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = data.nrows();
    if n == 0 {
        return (vec![0.0; data.ncols()], vec![1.0; data.ncols()]);
    }
    data.column_iter()
        .map(|col| {
            let mean = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            (mean, var)
        })
        .unzip()
}
