use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{ensure, Error, Result};
use crate::grid::NetworkCase;
use crate::pf::{branch_flows, PfState};
use crate::scenario::Samples;

/// Estimated (or true) unknown voltages of a batch of samples: angles of
/// the non-slack buses relative to the slack, and load-bus magnitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct StateEstimate {
    pub angles: DMatrix<f64>,
    pub magnitudes: DMatrix<f64>,
}

impl StateEstimate {
    /// The ground-truth states of a dataset part.
    pub fn from_samples(s: &Samples) -> Self {
        StateEstimate {
            angles: s.angles.clone(),
            magnitudes: s.magnitudes.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.angles.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, case: &NetworkCase) -> Result<()> {
        let layout = case.layout();
        ensure!(
            self.angles.ncols() == layout.n_angles()
                && self.magnitudes.ncols() == layout.n_loads()
                && self.magnitudes.nrows() == self.angles.nrows(),
            Error::Contract("state estimate does not match the case".into())
        );
        Ok(())
    }

    /// Full voltage state of sample `k`. The slack angle and the slack and
    /// generator magnitudes come from the case, not from the estimate.
    pub fn state(&self, case: &NetworkCase, k: usize) -> PfState {
        let layout = case.layout();
        let mut state = PfState::flat(case);
        let theta0 = case.slack_angle();
        for (c, bus) in layout.angle_buses().enumerate() {
            state.v_ang[bus] = theta0 + self.angles[(k, c)];
        }
        for (c, &bus) in layout.loads.iter().enumerate() {
            state.v_mag[bus] = self.magnitudes[(k, c)];
        }
        state
    }

    pub fn to_states(&self, case: &NetworkCase) -> Result<Vec<PfState>> {
        self.check(case)?;
        Ok((0..self.len()).map(|k| self.state(case, k)).collect())
    }
}

/// From-side branch flows of a batch, one column per in-service branch.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSamples {
    pub active: DMatrix<f64>,
    pub reactive: DMatrix<f64>,
}

/// Branch flows implied by every estimated state.
pub fn estimate_branch_flows(case: &NetworkCase, est: &StateEstimate) -> Result<FlowSamples> {
    est.check(case)?;
    let rows: Vec<_> = (0..est.len())
        .into_par_iter()
        .map(|k| branch_flows(case, &est.state(case, k)))
        .collect::<Result<_>>()?;
    let m = case.n_lines();
    Ok(FlowSamples {
        active: DMatrix::from_fn(rows.len(), m, |r, c| rows[r].p_from[c]),
        reactive: DMatrix::from_fn(rows.len(), m, |r, c| rows[r].q_from[c]),
    })
}

/// Branch angle differences `θ_from − θ_to` for every sample.
pub fn angle_differences(case: &NetworkCase, angles: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let a = case.reduced_incidence();
    ensure!(
        angles.ncols() == a.ncols(),
        Error::Contract(format!("{} angle columns for {} non-slack buses", angles.ncols(), a.ncols()))
    );
    Ok(angles * a.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Branch, Bus, BusKind, Gen};

    /// Slack 1, PV 2, loads 3 and 4; a ring 1-2-3-4-1 plus chord 2-4.
    fn ring() -> NetworkCase {
        let bus = |id, kind| Bus {
            id,
            kind,
            p_demand: 0.1,
            q_demand: 0.05,
            gs_shunt: 0.0,
            bs_shunt: 0.0,
            base_kv: 100.0,
            v_mag_init: 1.0,
            v_ang_init: 0.0,
        };
        let gen = |bus_id, v| Gen {
            bus_id,
            p_out: 0.2,
            q_out: 0.0,
            v_setpoint: v,
            in_service: true,
        };
        let br = |from_bus, to_bus| Branch {
            from_bus,
            to_bus,
            r: 0.01,
            x: 0.1,
            b_charge: 0.02,
            tap: 1.0,
            shift: 0.0,
            in_service: true,
        };
        NetworkCase::new(
            100.0,
            vec![
                bus(1, BusKind::Slack),
                bus(2, BusKind::Generator),
                bus(3, BusKind::Load),
                bus(4, BusKind::Load),
            ],
            vec![gen(1, 1.02), gen(2, 1.01)],
            vec![br(1, 2), br(2, 3), br(3, 4), br(4, 1), br(2, 4)],
        )
        .unwrap()
    }

    fn estimate() -> StateEstimate {
        StateEstimate {
            angles: DMatrix::from_row_slice(2, 3, &[-0.01, -0.03, -0.02, 0.02, -0.05, 0.01]),
            magnitudes: DMatrix::from_row_slice(2, 2, &[0.99, 0.98, 1.0, 0.97]),
        }
    }

    #[test]
    fn known_values_are_copied() {
        let case = ring();
        for s in estimate().to_states(&case).unwrap() {
            assert_eq!(s.v_mag[0], 1.02);
            assert_eq!(s.v_mag[1], 1.01);
            assert_eq!(s.v_ang[0], 0.0);
        }
    }

    #[test]
    fn angle_perturbation_is_local() {
        let case = ring();
        let base = estimate();
        let mut moved = base.clone();
        // bus 3 is angle column 1; its branches are 2-3 and 3-4
        moved.angles[(0, 1)] += 1e-3;
        let f0 = estimate_branch_flows(&case, &base).unwrap();
        let f1 = estimate_branch_flows(&case, &moved).unwrap();
        for k in 0..5 {
            let changed = f0.active[(0, k)] != f1.active[(0, k)];
            assert_eq!(changed, k == 1 || k == 2, "branch {k}");
            assert_eq!(f0.active[(1, k)], f1.active[(1, k)]);
        }
    }

    #[test]
    fn differences_sum_to_zero_around_loops() {
        let case = ring();
        let d = angle_differences(&case, &estimate().angles).unwrap();
        for r in 0..2 {
            // 1-2, 2-3, 3-4, 4-1 is a cycle
            let cycle = d[(r, 0)] + d[(r, 1)] + d[(r, 2)] + d[(r, 3)];
            assert!(cycle.abs() < 1e-12);
            // 2-4 closes 2-3-4
            assert!((d[(r, 1)] + d[(r, 2)] - d[(r, 4)]).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut e = estimate();
        e.magnitudes = DMatrix::zeros(2, 3);
        assert!(matches!(estimate_branch_flows(&ring(), &e), Err(Error::Contract(_))));
    }
}
