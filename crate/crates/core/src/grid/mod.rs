//! Network model: buses, generators and branches of a transmission grid,
//! plus the nodal admittance matrix built from them.
//!
//! All electrical quantities are stored in per-unit on the case's MVA base
//! and all angles in radians. Conversion from MATPOWER's MW/MVAr/degree
//! columns happens once, in [`parse_case`].

mod matpower;
pub(crate) mod ybus;

use std::collections::HashMap;

pub use matpower::{parse_case, write_case};
pub use ybus::{build_ybus, AdmittanceMatrix};

use crate::error::{ensure, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BusKind {
    /// Reference bus: magnitude and angle fixed.
    Slack,
    /// PV bus: active injection and magnitude specified.
    Generator,
    /// PQ bus: active and reactive injections specified.
    Load,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bus {
    /// External bus number as written in the case file.
    pub id: usize,
    pub kind: BusKind,
    pub p_demand: f64,
    pub q_demand: f64,
    pub gs_shunt: f64,
    pub bs_shunt: f64,
    /// kV
    pub base_kv: f64,
    pub v_mag_init: f64,
    pub v_ang_init: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gen {
    pub bus_id: usize,
    pub p_out: f64,
    pub q_out: f64,
    pub v_setpoint: f64,
    pub in_service: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    /// Total line-charging susceptance; half is placed at each terminal.
    pub b_charge: f64,
    /// Off-nominal turns ratio on the from side, 1.0 for lines.
    pub tap: f64,
    /// Phase shift in radians.
    pub shift: f64,
    pub in_service: bool,
}

/// Positions of the bus classes in the dense 0..N-1 bus indexing.
///
/// Every vector the library exchanges with the learners is laid out by
/// these lists: injections as `[P_g; P_l; Q_l]` over `generators` then
/// `loads`, angles as `[θ_g; θ_l]` over the same lists, and magnitudes
/// over `loads`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BusLayout {
    pub slack: usize,
    pub generators: Vec<usize>,
    pub loads: Vec<usize>,
    /// All non-slack buses in ascending index order (mismatch ordering).
    pub non_slack: Vec<usize>,
}

impl BusLayout {
    /// Length of an injection vector, `N_g + 2 N_l`.
    pub fn n_inputs(&self) -> usize {
        self.generators.len() + 2 * self.loads.len()
    }

    /// Length of an angle vector, `N - 1`.
    pub fn n_angles(&self) -> usize {
        self.generators.len() + self.loads.len()
    }

    pub fn n_loads(&self) -> usize {
        self.loads.len()
    }

    /// Bus indices in angle-vector order: generators then loads.
    pub fn angle_buses(&self) -> impl Iterator<Item = usize> + '_ {
        self.generators.iter().chain(self.loads.iter()).copied()
    }
}

/// A validated network case.
///
/// Fields are private so the invariants checked in [`NetworkCase::new`]
/// (single slack, unique ids, resolvable references) cannot be broken
/// after construction.
#[derive(Clone, Debug)]
pub struct NetworkCase {
    base_mva: f64,
    buses: Vec<Bus>,
    gens: Vec<Gen>,
    branches: Vec<Branch>,
    index: HashMap<usize, usize>,
    layout: BusLayout,
}

impl PartialEq for NetworkCase {
    fn eq(&self, other: &Self) -> bool {
        self.base_mva == other.base_mva
            && self.buses == other.buses
            && self.gens == other.gens
            && self.branches == other.branches
    }
}

impl NetworkCase {
    pub fn new(base_mva: f64, buses: Vec<Bus>, gens: Vec<Gen>, branches: Vec<Branch>) -> Result<Self> {
        ensure!(
            base_mva.is_finite() && base_mva > 0.0,
            Error::Validation(format!("baseMVA must be positive, got {base_mva}"))
        );
        ensure!(!buses.is_empty(), Error::Validation("case has no buses".into()));

        let mut index = HashMap::with_capacity(buses.len());
        for (i, bus) in buses.iter().enumerate() {
            if index.insert(bus.id, i).is_some() {
                return Err(Error::Validation(format!("duplicate bus id {}", bus.id)));
            }
            ensure!(
                bus.v_mag_init > 0.0,
                Error::Validation(format!("bus {} has non-positive initial magnitude", bus.id))
            );
        }

        let slacks: Vec<usize> = buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BusKind::Slack)
            .map(|(i, _)| i)
            .collect();
        ensure!(
            slacks.len() == 1,
            Error::Validation(format!("expected exactly one slack bus, found {}", slacks.len()))
        );

        for gen in &gens {
            let Some(&i) = index.get(&gen.bus_id) else {
                return Err(Error::Validation(format!(
                    "generator references missing bus {}",
                    gen.bus_id
                )));
            };
            if gen.in_service && buses[i].kind == BusKind::Load {
                return Err(Error::Validation(format!(
                    "in-service generator at PQ bus {}",
                    gen.bus_id
                )));
            }
        }
        for bus in &buses {
            if bus.kind == BusKind::Generator
                && !gens.iter().any(|g| g.in_service && g.bus_id == bus.id)
            {
                return Err(Error::Validation(format!(
                    "PV bus {} has no in-service generator",
                    bus.id
                )));
            }
        }
        for (k, br) in branches.iter().enumerate() {
            for end in [br.from_bus, br.to_bus] {
                ensure!(
                    index.contains_key(&end),
                    Error::Validation(format!("branch {k} references missing bus {end}"))
                );
            }
            ensure!(
                br.from_bus != br.to_bus,
                Error::Validation(format!("branch {k} connects bus {} to itself", br.from_bus))
            );
            ensure!(
                br.tap > 0.0 && br.tap.is_finite(),
                Error::Validation(format!("branch {k} has non-positive tap ratio {}", br.tap))
            );
        }

        let layout = BusLayout {
            slack: slacks[0],
            generators: indices_of(&buses, BusKind::Generator),
            loads: indices_of(&buses, BusKind::Load),
            non_slack: (0..buses.len()).filter(|&i| i != slacks[0]).collect(),
        };

        Ok(NetworkCase {
            base_mva,
            buses,
            gens,
            branches,
            index,
            layout,
        })
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn gens(&self) -> &[Gen] {
        &self.gens
    }

    /// All branches, including out-of-service ones.
    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    /// In-service branches with their position in [`Self::branches`].
    pub fn in_service_branches(&self) -> impl Iterator<Item = (usize, &Branch)> {
        self.branches.iter().enumerate().filter(|(_, b)| b.in_service)
    }

    /// `N`
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// `M`, the number of in-service branches.
    pub fn n_lines(&self) -> usize {
        self.branches.iter().filter(|b| b.in_service).count()
    }

    pub fn layout(&self) -> &BusLayout {
        &self.layout
    }

    /// Dense index of an external bus number.
    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub(crate) fn endpoints(&self, br: &Branch) -> (usize, usize) {
        (self.index[&br.from_bus], self.index[&br.to_bus])
    }

    /// Voltage magnitude held fixed at bus `i`: the first in-service
    /// generator's setpoint for PV and slack buses, `None` for PQ buses.
    pub fn voltage_setpoint(&self, i: usize) -> Option<f64> {
        let bus = &self.buses[i];
        match bus.kind {
            BusKind::Load => None,
            _ => self
                .gens
                .iter()
                .find(|g| g.in_service && g.bus_id == bus.id)
                .map(|g| g.v_setpoint)
                .or(Some(bus.v_mag_init)),
        }
    }

    /// Reference angle of the slack bus.
    pub fn slack_angle(&self) -> f64 {
        self.buses[self.layout.slack].v_ang_init
    }

    /// Net active generation of in-service units at bus `i`.
    pub fn generation_at(&self, i: usize) -> (f64, f64) {
        let id = self.buses[i].id;
        self.gens
            .iter()
            .filter(|g| g.in_service && g.bus_id == id)
            .fold((0.0, 0.0), |(p, q), g| (p + g.p_out, q + g.q_out))
    }

    /// Copy of the case with a different branch list.
    pub fn with_branches(&self, branches: Vec<Branch>) -> Result<Self> {
        NetworkCase::new(self.base_mva, self.buses.clone(), self.gens.clone(), branches)
    }

    /// Reduced branch-bus incidence matrix over the in-service branches.
    ///
    /// Row `k` carries `+1` in the column of the from bus and `-1` in the
    /// column of the to bus; columns follow the angle-vector order of
    /// [`BusLayout::angle_buses`] and the slack column is dropped, so rows
    /// of slack-incident branches keep a single nonzero.
    pub fn reduced_incidence(&self) -> nalgebra::DMatrix<f64> {
        let mut column = vec![usize::MAX; self.n_buses()];
        for (c, bus) in self.layout.angle_buses().enumerate() {
            column[bus] = c;
        }
        let mut a = nalgebra::DMatrix::zeros(self.n_lines(), self.layout.n_angles());
        for (row, (_, br)) in self.in_service_branches().enumerate() {
            let (f, t) = self.endpoints(br);
            if f != self.layout.slack {
                a[(row, column[f])] += 1.0;
            }
            if t != self.layout.slack {
                a[(row, column[t])] -= 1.0;
            }
        }
        a
    }
}

fn indices_of(buses: &[Bus], kind: BusKind) -> Vec<usize> {
    buses
        .iter()
        .enumerate()
        .filter(|(_, b)| b.kind == kind)
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Two buses joined by one line: slack at bus 1, a PQ load at bus 2.
    pub fn two_bus(r: f64, x: f64, b_charge: f64, p_load: f64, q_load: f64) -> NetworkCase {
        let bus = |id, kind| Bus {
            id,
            kind,
            p_demand: 0.0,
            q_demand: 0.0,
            gs_shunt: 0.0,
            bs_shunt: 0.0,
            base_kv: 0.0,
            v_mag_init: 1.0,
            v_ang_init: 0.0,
        };
        let mut load = bus(2, BusKind::Load);
        load.p_demand = p_load;
        load.q_demand = q_load;
        NetworkCase::new(
            100.0,
            vec![bus(1, BusKind::Slack), load],
            vec![Gen {
                bus_id: 1,
                p_out: 0.0,
                q_out: 0.0,
                v_setpoint: 1.0,
                in_service: true,
            }],
            vec![Branch {
                from_bus: 1,
                to_bus: 2,
                r,
                x,
                b_charge,
                tap: 1.0,
                shift: 0.0,
                in_service: true,
            }],
        )
        .unwrap()
    }
}
