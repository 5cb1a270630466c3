use nalgebra::{Complex, DMatrix};

use super::NetworkCase;
use crate::error::{Error, Result};

/// Nodal admittance matrix `Y = G + jB`, stored densely.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmittanceMatrix {
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl AdmittanceMatrix {
    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex<f64> {
        Complex::new(self.g[(i, j)], self.b[(i, j)])
    }
}

/// Two-port admittances `(y_ff, y_ft, y_tf, y_tt)` of a branch in the
/// standard pi model with an ideal phase-shifting transformer on the from
/// side.
pub(crate) fn branch_admittances(
    r: f64,
    x: f64,
    b_charge: f64,
    tap: f64,
    shift: f64,
) -> [Complex<f64>; 4] {
    let ys = Complex::new(r, x).inv();
    let ytt = ys + Complex::new(0.0, b_charge / 2.0);
    let t = Complex::from_polar(tap, shift);
    let yff = ytt / (tap * tap);
    let yft = -ys / t.conj();
    let ytf = -ys / t;
    [yff, yft, ytf, ytt]
}

/// Assemble the bus admittance matrix of a case.
///
/// Out-of-service branches contribute nothing. An in-service branch with
/// `r = x = 0` has no finite series admittance and is rejected.
pub fn build_ybus(case: &NetworkCase) -> Result<AdmittanceMatrix> {
    let n = case.n_buses();
    let mut y = DMatrix::<Complex<f64>>::zeros(n, n);

    for (i, bus) in case.buses().iter().enumerate() {
        y[(i, i)] += Complex::new(bus.gs_shunt, bus.bs_shunt);
    }
    for (k, br) in case.in_service_branches() {
        if br.r == 0.0 && br.x == 0.0 {
            return Err(Error::SingularElement {
                index: k,
                from: br.from_bus,
                to: br.to_bus,
            });
        }
        let (f, t) = case.endpoints(br);
        let [yff, yft, ytf, ytt] = branch_admittances(br.r, br.x, br.b_charge, br.tap, br.shift);
        y[(f, f)] += yff;
        y[(f, t)] += yft;
        y[(t, f)] += ytf;
        y[(t, t)] += ytt;
    }

    Ok(AdmittanceMatrix {
        g: y.map(|c| c.re),
        b: y.map(|c| c.im),
    })
}
