//! Newton-Raphson AC power flow in polar coordinates and branch-flow
//! recovery.
//!
//! The unknowns are the angles of every non-slack bus and the magnitudes of
//! every PQ bus. The residual is the nodal power balance
//!
//! ```text
//! ΔP_i = P_i^spec − V_i Σ_j V_j (G_ij cos θ_ij + B_ij sin θ_ij)    i ∈ PV ∪ PQ
//! ΔQ_i = Q_i^spec − V_i Σ_j V_j (G_ij sin θ_ij − B_ij cos θ_ij)    i ∈ PQ
//! ```
//!
//! ordered by ascending bus index within each block.

mod flows;
mod linsolve;

pub use flows::{branch_flows, BranchFlows};
pub use linsolve::{DenseLu, LinearSolve};

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{ensure, Error, Result};
use crate::grid::{AdmittanceMatrix, NetworkCase};
use crate::scenario::InjectionSample;

/// Bus voltage phasors in polar form, indexed by dense bus index.
#[derive(Clone, Debug, PartialEq)]
pub struct PfState {
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
}

impl PfState {
    /// Flat start: PQ magnitudes at 1.0, PV and slack magnitudes at their
    /// setpoints, every angle at the slack reference.
    pub fn flat(case: &NetworkCase) -> Self {
        let n = case.n_buses();
        let v_mag = (0..n).map(|i| case.voltage_setpoint(i).unwrap_or(1.0)).collect();
        PfState {
            v_mag,
            v_ang: vec![case.slack_angle(); n],
        }
    }

    /// The voltages stored in the case file.
    pub fn from_case(case: &NetworkCase) -> Self {
        PfState {
            v_mag: case.buses().iter().map(|b| b.v_mag_init).collect(),
            v_ang: case.buses().iter().map(|b| b.v_ang_init).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.v_mag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_mag.is_empty()
    }

    pub fn phasors(&self) -> Vec<Complex<f64>> {
        self.v_mag
            .iter()
            .zip(&self.v_ang)
            .map(|(&m, &a)| Complex::from_polar(m, a))
            .collect()
    }

    fn pin_known(&mut self, case: &NetworkCase) {
        let layout = case.layout();
        self.v_ang[layout.slack] = case.slack_angle();
        for i in std::iter::once(layout.slack).chain(layout.generators.iter().copied()) {
            if let Some(v) = case.voltage_setpoint(i) {
                self.v_mag[i] = v;
            }
        }
    }

    fn check_dims(&self, case: &NetworkCase) -> Result<()> {
        ensure!(
            self.v_mag.len() == case.n_buses() && self.v_ang.len() == case.n_buses(),
            Error::Contract(format!(
                "state has {} magnitudes and {} angles for a {}-bus case",
                self.v_mag.len(),
                self.v_ang.len(),
                case.n_buses()
            ))
        );
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PfSolution {
    pub state: PfState,
    pub iterations: usize,
    /// ∞-norm of the final mismatch.
    pub max_mismatch: f64,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Starting point; flat start when `None`. Known quantities are
    /// re-pinned to the case values before iterating.
    pub initial: Option<PfState>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-8,
            max_iter: 20,
            initial: None,
        }
    }
}

/// Per-bus specified injections `(P, Q)` scattered from an injection
/// vector. Slack entries are zero and unused.
pub fn specified_power(case: &NetworkCase, inj: &InjectionSample) -> Result<(Vec<f64>, Vec<f64>)> {
    let layout = case.layout();
    ensure!(
        inj.x.len() == layout.n_inputs(),
        Error::Contract(format!(
            "injection vector has length {}, case expects {}",
            inj.x.len(),
            layout.n_inputs()
        ))
    );
    let n = case.n_buses();
    let (ng, nl) = (layout.generators.len(), layout.loads.len());
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for (k, &bus) in layout.generators.iter().enumerate() {
        p[bus] = inj.x[k];
    }
    for (k, &bus) in layout.loads.iter().enumerate() {
        p[bus] = inj.x[ng + k];
        q[bus] = inj.x[ng + nl + k];
    }
    Ok((p, q))
}

/// Complex power `S_i = V_i conj(Σ_j Y_ij V_j)` drawn out of the network at
/// every bus, together with the nodal currents.
fn injected_power(y: &AdmittanceMatrix, v: &[Complex<f64>]) -> (Vec<Complex<f64>>, Vec<Complex<f64>>) {
    let n = v.len();
    let mut current = vec![Complex::new(0.0, 0.0); n];
    for (i, c) in current.iter_mut().enumerate() {
        let mut acc = Complex::new(0.0, 0.0);
        for (j, vj) in v.iter().enumerate() {
            let (g, b) = (y.g[(i, j)], y.b[(i, j)]);
            if g != 0.0 || b != 0.0 {
                acc += Complex::new(g, b) * vj;
            }
        }
        *c = acc;
    }
    let power = v.iter().zip(&current).map(|(vi, ii)| vi * ii.conj()).collect();
    (power, current)
}

/// Calculated active and reactive injections at every bus.
pub fn calculated_power(y: &AdmittanceMatrix, state: &PfState) -> (Vec<f64>, Vec<f64>) {
    let (s, _) = injected_power(y, &state.phasors());
    (s.iter().map(|c| c.re).collect(), s.iter().map(|c| c.im).collect())
}

/// Power-balance residual `[ΔP over PV ∪ PQ; ΔQ over PQ]`.
pub fn mismatch(
    case: &NetworkCase,
    y: &AdmittanceMatrix,
    state: &PfState,
    inj: &InjectionSample,
) -> Result<Vec<f64>> {
    state.check_dims(case)?;
    ensure!(
        y.dim() == case.n_buses(),
        Error::Contract("admittance matrix does not match the case".into())
    );
    let (p_spec, q_spec) = specified_power(case, inj)?;
    let (p, q) = calculated_power(y, state);
    Ok(mismatch_from(case, &p_spec, &q_spec, &p, &q))
}

fn mismatch_from(case: &NetworkCase, p_spec: &[f64], q_spec: &[f64], p: &[f64], q: &[f64]) -> Vec<f64> {
    let layout = case.layout();
    layout
        .non_slack
        .iter()
        .map(|&i| p_spec[i] - p[i])
        .chain(layout.loads.iter().map(|&i| q_spec[i] - q[i]))
        .collect()
}

/// Polar Jacobian of the calculated injections with respect to
/// `[θ over PV ∪ PQ; V over PQ]`.
///
/// This is the derivative of `(P, Q)` themselves; the mismatch has the
/// opposite sign.
pub fn jacobian(case: &NetworkCase, y: &AdmittanceMatrix, state: &PfState) -> DMatrix<f64> {
    let layout = case.layout();
    let v = state.phasors();
    let (_, current) = injected_power(y, &v);
    let n = v.len();
    let unit: Vec<Complex<f64>> = state.v_ang.iter().map(|&a| Complex::from_polar(1.0, a)).collect();

    // dS_i/dθ_k = j V_i conj(δ_ik I_i − Y_ik V_k)
    // dS_i/dV_k = V_i conj(Y_ik u_k) + δ_ik conj(I_i) u_i
    let j = Complex::new(0.0, 1.0);
    let mut ds_dang = DMatrix::<Complex<f64>>::zeros(n, n);
    let mut ds_dmag = DMatrix::<Complex<f64>>::zeros(n, n);
    for i in 0..n {
        for k in 0..n {
            let yik = y.get(i, k);
            if yik.re == 0.0 && yik.im == 0.0 && i != k {
                continue;
            }
            let diag = if i == k { current[i] } else { Complex::new(0.0, 0.0) };
            ds_dang[(i, k)] = j * v[i] * (diag - yik * v[k]).conj();
            let mut dm = v[i] * (yik * unit[k]).conj();
            if i == k {
                dm += current[i].conj() * unit[i];
            }
            ds_dmag[(i, k)] = dm;
        }
    }

    let (na, nm) = (layout.non_slack.len(), layout.loads.len());
    let mut jac = DMatrix::zeros(na + nm, na + nm);
    for (r, &i) in layout.non_slack.iter().enumerate() {
        for (c, &k) in layout.non_slack.iter().enumerate() {
            jac[(r, c)] = ds_dang[(i, k)].re;
        }
        for (c, &k) in layout.loads.iter().enumerate() {
            jac[(r, na + c)] = ds_dmag[(i, k)].re;
        }
    }
    for (r, &i) in layout.loads.iter().enumerate() {
        for (c, &k) in layout.non_slack.iter().enumerate() {
            jac[(na + r, c)] = ds_dang[(i, k)].im;
        }
        for (c, &k) in layout.loads.iter().enumerate() {
            jac[(na + r, na + c)] = ds_dmag[(i, k)].im;
        }
    }
    jac
}

/// Solve the power flow with the dense LU backend.
pub fn solve_pf(
    case: &NetworkCase,
    y: &AdmittanceMatrix,
    inj: &InjectionSample,
    opts: &SolveOptions,
) -> Result<PfSolution> {
    solve_pf_with(case, y, inj, opts, &DenseLu)
}

/// Full Newton-Raphson iteration with a caller-supplied linear solver.
///
/// Running out of iterations is not an error: the returned solution has
/// `converged == false`. A singular Jacobian or a non-finite iterate is.
pub fn solve_pf_with(
    case: &NetworkCase,
    y: &AdmittanceMatrix,
    inj: &InjectionSample,
    opts: &SolveOptions,
    solver: &dyn LinearSolve,
) -> Result<PfSolution> {
    ensure!(
        opts.tol > 0.0 && opts.max_iter >= 1,
        Error::Config(format!(
            "solver needs tol > 0 and max_iter >= 1 (got {} and {})",
            opts.tol, opts.max_iter
        ))
    );
    let layout = case.layout();
    let (p_spec, q_spec) = specified_power(case, inj)?;
    let mut state = opts.initial.clone().unwrap_or_else(|| PfState::flat(case));
    state.check_dims(case)?;
    state.pin_known(case);

    let na = layout.non_slack.len();
    let mut iteration = 0;
    loop {
        let (p, q) = calculated_power(y, &state);
        let f = mismatch_from(case, &p_spec, &q_spec, &p, &q);
        let norm = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !norm.is_finite() {
            return Err(Error::Solver {
                iteration,
                message: "non-finite mismatch".into(),
            });
        }
        if norm <= opts.tol || iteration == opts.max_iter {
            return Ok(PfSolution {
                state,
                iterations: iteration,
                max_mismatch: norm,
                converged: norm <= opts.tol,
            });
        }

        iteration += 1;
        let jac = jacobian(case, y, &state);
        let dx = solver
            .solve(jac, DVector::from_vec(f))
            .ok_or_else(|| Error::Solver {
                iteration,
                message: "singular Jacobian".into(),
            })?;
        for (k, &i) in layout.non_slack.iter().enumerate() {
            state.v_ang[i] += dx[k];
        }
        for (k, &i) in layout.loads.iter().enumerate() {
            state.v_mag[i] += dx[na + k];
        }
        if dx.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver {
                iteration,
                message: "non-finite state".into(),
            });
        }
    }
}
