use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Affine map `y = H [1; x]`.
///
/// `h` is `d_out × (d_in + 1)` with the intercept in column 0.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub h: DMatrix<f64>,
}

/// Relative threshold on the triangular factor below which a design is
/// treated as rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Ordinary least squares with an intercept, one independent fit per
/// target column.
///
/// Columns are centred first, so the intercept absorbs the means and the
/// slopes come from a QR factorization of the centred design. When that
/// design is rank deficient (constant or collinear inputs) the slopes are
/// the minimum-norm solution from an SVD instead.
pub fn fit_ols(inputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<LinearModel> {
    let (n, d_in) = inputs.shape();
    ensure!(
        targets.nrows() == n,
        Error::Contract(format!("{n} input rows but {} target rows", targets.nrows()))
    );
    ensure!(
        n > d_in + 1,
        Error::Config(format!(
            "least squares with {d_in} inputs and an intercept needs more than {} rows, got {n}",
            d_in + 1
        ))
    );
    let x_mean = inputs.row_mean();
    let y_mean = targets.row_mean();
    let mut xc = inputs.clone();
    for mut row in xc.row_iter_mut() {
        row -= &x_mean;
    }
    let mut yc = targets.clone();
    for mut row in yc.row_iter_mut() {
        row -= &y_mean;
    }

    let slopes = solve_qr(&xc, &yc).unwrap_or_else(|| solve_min_norm(&xc, &yc));
    // slopes is d_in × d_out
    let intercept = &y_mean - &x_mean * &slopes;
    let d_out = targets.ncols();
    let mut h = DMatrix::zeros(d_out, d_in + 1);
    for o in 0..d_out {
        h[(o, 0)] = intercept[o];
        for i in 0..d_in {
            h[(o, i + 1)] = slopes[(i, o)];
        }
    }
    ensure!(
        h.iter().all(|v| v.is_finite()),
        Error::Dataset("least-squares coefficients are not finite".into())
    );
    Ok(LinearModel { h })
}

fn solve_qr(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if x.ncols() == 0 {
        return Some(DMatrix::zeros(0, y.ncols()));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let diag = r.diagonal().abs();
    let top = diag.max();
    if top == 0.0 || diag.min() <= RANK_TOL * top {
        return None;
    }
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let qty = qty.rows(0, x.ncols()).into_owned();
    r.solve_upper_triangular(&qty)
}

fn solve_min_norm(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = x.clone().svd(true, true);
    let top = svd.singular_values.max();
    svd.solve(y, RANK_TOL * top.max(f64::MIN_POSITIVE))
        .expect("both singular vector sets were computed")
}

impl LinearModel {
    pub fn d_in(&self) -> usize {
        self.h.ncols() - 1
    }

    pub fn d_out(&self) -> usize {
        self.h.nrows()
    }

    pub fn intercept(&self) -> Vec<f64> {
        self.h.column(0).iter().copied().collect()
    }

    /// Predictions for a batch of input rows.
    pub fn predict(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        ensure!(
            inputs.ncols() == self.d_in(),
            Error::Contract(format!(
                "linear model expects {} inputs, got {}",
                self.d_in(),
                inputs.ncols()
            ))
        );
        let slopes = self.h.columns(1, self.d_in());
        let mut out = inputs * slopes.transpose();
        for mut row in out.row_iter_mut() {
            for (o, v) in row.iter_mut().enumerate() {
                *v += self.h[(o, 0)];
            }
        }
        Ok(out)
    }

    /// Keep only the given output rows.
    pub fn select_outputs(&self, outputs: &[usize]) -> LinearModel {
        LinearModel {
            h: self.h.select_rows(outputs),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearFile {
    format: String,
    version: u32,
    d_in: usize,
    d_out: usize,
    /// Row-major `d_out × (d_in + 1)`, intercept first in each row.
    coefficients: Vec<f64>,
    fingerprint: String,
}

const LINEAR_FORMAT: &str = "ppf-lab-linear";

impl LinearModel {
    pub fn to_json(&self, fingerprint: &str) -> String {
        let file = LinearFile {
            format: LINEAR_FORMAT.into(),
            version: 1,
            d_in: self.d_in(),
            d_out: self.d_out(),
            coefficients: self.h.transpose().iter().copied().collect(),
            fingerprint: fingerprint.into(),
        };
        serde_json::to_string_pretty(&file).expect("plain data serializes")
    }

    /// Parse a model written by [`LinearModel::to_json`]; returns the model
    /// and the stored fingerprint.
    pub fn from_json(text: &str) -> std::result::Result<(Self, String), String> {
        let file: LinearFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if file.format != LINEAR_FORMAT || file.version != 1 {
            return Err(format!("unsupported model container {} v{}", file.format, file.version));
        }
        if file.coefficients.len() != file.d_out * (file.d_in + 1) {
            return Err("coefficient count does not match the stated shape".into());
        }
        let h = DMatrix::from_row_slice(file.d_out, file.d_in + 1, &file.coefficients);
        Ok((LinearModel { h }, file.fingerprint))
    }
}
