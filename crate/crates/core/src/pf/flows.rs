use nalgebra::Complex;

use super::PfState;
use crate::error::{ensure, Error, Result};
use crate::grid::{ybus::branch_admittances, NetworkCase};

/// Complex power entering each in-service branch at both terminals,
/// in the order of [`NetworkCase::in_service_branches`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BranchFlows {
    pub p_from: Vec<f64>,
    pub q_from: Vec<f64>,
    pub p_to: Vec<f64>,
    pub q_to: Vec<f64>,
}

impl BranchFlows {
    pub fn len(&self) -> usize {
        self.p_from.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_from.is_empty()
    }
}

/// Branch flows of a voltage state using the two-port branch model.
///
/// For a line without transformer (`tap = 1`, `shift = 0`) the from-side
/// flow is
///
/// ```text
/// P_ij = −G_ij V_i² + V_i V_j (G_ij cos θ_ij + B_ij sin θ_ij)
/// Q_ij =  B_ij V_i² + V_i V_j (G_ij sin θ_ij − B_ij cos θ_ij) − (b^c/2) V_i²
/// ```
///
/// with `G_ij + jB_ij = −1/(r + jx)` the branch's off-diagonal admittance.
pub fn branch_flows(case: &NetworkCase, state: &PfState) -> Result<BranchFlows> {
    ensure!(
        state.v_mag.len() == case.n_buses() && state.v_ang.len() == case.n_buses(),
        Error::Contract(format!("state length does not match the {}-bus case", case.n_buses()))
    );
    let v = state.phasors();
    let m = case.n_lines();
    let mut out = BranchFlows {
        p_from: Vec::with_capacity(m),
        q_from: Vec::with_capacity(m),
        p_to: Vec::with_capacity(m),
        q_to: Vec::with_capacity(m),
    };
    for (_, br) in case.in_service_branches() {
        let (f, t) = case.endpoints(br);
        let [yff, yft, ytf, ytt] = branch_admittances(br.r, br.x, br.b_charge, br.tap, br.shift);
        let s_from: Complex<f64> = v[f] * (yff * v[f] + yft * v[t]).conj();
        let s_to: Complex<f64> = v[t] * (ytf * v[f] + ytt * v[t]).conj();
        out.p_from.push(s_from.re);
        out.q_from.push(s_from.im);
        out.p_to.push(s_to.re);
        out.q_to.push(s_to.im);
    }
    Ok(out)
}
