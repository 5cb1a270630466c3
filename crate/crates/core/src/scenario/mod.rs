//! Random power-injection scenarios and Monte Carlo ground truth.
//!
//! Each sample draws
//!
//! * active injections of the profile buses from a [`ProfileSource`], with
//!   reactive injection `Q = P·u`, `u ~ Uniform(0, 1)` per bus and sample;
//! * active and reactive demands of every other PQ bus from a Gaussian
//!   centred on the case demands, with standard deviation
//!   `load_std_fraction · |mean|` and equicorrelation `corr_p` among the
//!   active demands and `corr_q` among the reactive ones.
//!
//! Sample `k` is generated from its own ChaCha stream, so it can be
//! reproduced in isolation and samples can be farmed out in any order.

mod dataset;
mod profile;

pub use dataset::{
    build_dataset, load_dataset, metadata_path, save_dataset, Columns, Dataset, DatasetOptions, Part, Samples,
    SplitSizes,
};
pub use profile::{ProfileConfig, ProfileSource, ProfileTable, SyntheticPv};

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::grid::{BusKind, NetworkCase};

/// Specified injections `x = [P_g; P_l; Q_l]` in per-unit, ordered by the
/// case's [`BusLayout`](crate::grid::BusLayout).
#[derive(Clone, Debug, PartialEq)]
pub struct InjectionSample {
    pub x: Vec<f64>,
}

impl InjectionSample {
    /// The injections written in the case file: generator output minus
    /// demand at PV buses, negated demand at PQ buses.
    pub fn base(case: &NetworkCase) -> Self {
        let layout = case.layout();
        let buses = case.buses();
        let mut x = Vec::with_capacity(layout.n_inputs());
        x.extend(layout.generators.iter().map(|&i| case.generation_at(i).0 - buses[i].p_demand));
        x.extend(layout.loads.iter().map(|&i| -buses[i].p_demand));
        x.extend(layout.loads.iter().map(|&i| -buses[i].q_demand));
        InjectionSample { x }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Bus numbers whose active injection follows the profile source.
    /// When absent, the `profile_bus_count` PQ buses with the largest
    /// active demand are used.
    pub profile_buses: Option<Vec<usize>>,
    pub profile_bus_count: usize,
    pub load_std_fraction: f64,
    pub corr_p: f64,
    pub corr_q: f64,
    pub seed: u64,
    pub sample_count: usize,
    pub split: SplitSizes,
    pub profile: ProfileConfig,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            profile_buses: None,
            profile_bus_count: 20,
            load_std_fraction: 0.01,
            corr_p: 0.2,
            corr_q: 0.8,
            seed: 0,
            sample_count: 30_000,
            split: SplitSizes {
                train: 20_000,
                validation: 5_000,
                test: 5_000,
            },
            profile: ProfileConfig::default(),
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, rho) in [("corr_p", self.corr_p), ("corr_q", self.corr_q)] {
            ensure!(
                (0.0..1.0).contains(&rho),
                Error::Config(format!("{name} must lie in [0, 1), got {rho}"))
            );
        }
        ensure!(
            self.load_std_fraction >= 0.0 && self.load_std_fraction.is_finite(),
            Error::Config(format!(
                "load_std_fraction must be non-negative, got {}",
                self.load_std_fraction
            ))
        );
        Ok(())
    }

    /// Dense indices of the profile-driven buses.
    pub fn resolve_profile_buses(&self, case: &NetworkCase) -> Result<Vec<usize>> {
        let buses = case.buses();
        match &self.profile_buses {
            Some(ids) => {
                let mut out = Vec::with_capacity(ids.len());
                for &id in ids {
                    let i = case
                        .bus_index(id)
                        .ok_or_else(|| Error::Config(format!("profile bus {id} is not in the case")))?;
                    ensure!(
                        buses[i].kind == BusKind::Load,
                        Error::Config(format!("profile bus {id} is not a PQ bus"))
                    );
                    ensure!(!out.contains(&i), Error::Config(format!("profile bus {id} listed twice")));
                    out.push(i);
                }
                Ok(out)
            }
            None => {
                let mut loads = case.layout().loads.clone();
                // stable sort keeps file order among equal demands
                loads.sort_by(|&a, &b| buses[b].p_demand.total_cmp(&buses[a].p_demand));
                loads.truncate(self.profile_bus_count);
                loads.sort_unstable();
                Ok(loads)
            }
        }
    }
}

/// Precomputed sampling state for one case and configuration.
pub struct ScenarioGenerator<'a> {
    case: &'a NetworkCase,
    cfg: SamplingConfig,
    source: ProfileSource,
    /// Dense bus indices driven by the profile source.
    profile_buses: Vec<usize>,
    /// Remaining PQ buses with Gaussian demand.
    gaussian_buses: Vec<usize>,
    chol_p: DMatrix<f64>,
    chol_q: DMatrix<f64>,
}

impl<'a> ScenarioGenerator<'a> {
    pub fn new(case: &'a NetworkCase, cfg: &SamplingConfig, source: ProfileSource) -> Result<Self> {
        cfg.validate()?;
        let profile_buses = cfg.resolve_profile_buses(case)?;
        if let ProfileSource::Table(table) = &source {
            table.check_against(case, &profile_buses)?;
        }
        let gaussian_buses: Vec<usize> = case
            .layout()
            .loads
            .iter()
            .copied()
            .filter(|i| !profile_buses.contains(i))
            .collect();
        let n = gaussian_buses.len();
        Ok(ScenarioGenerator {
            case,
            cfg: cfg.clone(),
            source,
            profile_buses,
            chol_p: equicorrelation_factor(n, cfg.corr_p)?,
            chol_q: equicorrelation_factor(n, cfg.corr_q)?,
            gaussian_buses,
        })
    }

    pub fn profile_buses(&self) -> &[usize] {
        &self.profile_buses
    }

    pub fn gaussian_buses(&self) -> &[usize] {
        &self.gaussian_buses
    }

    /// Injection sample number `k`.
    pub fn sample(&self, k: usize) -> Result<InjectionSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(k as u64);

        let buses = self.case.buses();
        let mut inj = InjectionSample::base(self.case);
        let layout = self.case.layout();
        let (ng, nl) = (layout.generators.len(), layout.loads.len());
        let slot = |bus: usize| layout.loads.iter().position(|&l| l == bus).unwrap();

        let n = self.gaussian_buses.len();
        let z_p = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z_q = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let c_p = &self.chol_p * z_p;
        let c_q = &self.chol_q * z_q;
        let frac = self.cfg.load_std_fraction;
        for (g, &bus) in self.gaussian_buses.iter().enumerate() {
            let (mp, mq) = (buses[bus].p_demand, buses[bus].q_demand);
            let s = slot(bus);
            inj.x[ng + s] = -(mp + frac * mp.abs() * c_p[g]);
            inj.x[ng + nl + s] = -(mq + frac * mq.abs() * c_q[g]);
        }

        let active = self.source.draw(self.case, &self.profile_buses, k, &mut rng)?;
        for (&bus, &p) in self.profile_buses.iter().zip(&active) {
            let u: f64 = rng.sample(Open01);
            let s = slot(bus);
            inj.x[ng + s] = p;
            inj.x[ng + nl + s] = p * u;
        }
        Ok(inj)
    }
}

/// Draw injection sample `k` for `case`.
///
/// Convenience wrapper that rebuilds the sampling state on every call; use
/// [`ScenarioGenerator`] when drawing many samples.
pub fn sample_injections(
    case: &NetworkCase,
    cfg: &SamplingConfig,
    source: ProfileSource,
    k: usize,
) -> Result<InjectionSample> {
    ScenarioGenerator::new(case, cfg, source)?.sample(k)
}

/// Lower Cholesky factor of the `n×n` equicorrelation matrix
/// `(1 − ρ) I + ρ 11ᵀ`, with a small diagonal jitter as a fallback.
fn equicorrelation_factor(n: usize, rho: f64) -> Result<DMatrix<f64>> {
    let corr = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { rho });
    if let Some(ch) = Cholesky::new(corr.clone()) {
        return Ok(ch.unpack());
    }
    let jittered = corr + DMatrix::identity(n, n) * 1e-10;
    Cholesky::new(jittered)
        .map(|ch| ch.unpack())
        .ok_or_else(|| Error::Config(format!("correlation matrix with rho = {rho} is not positive definite")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::parse_case;

    fn case14() -> NetworkCase {
        parse_case(include_str!("../../../../cases/case14.m")).unwrap()
    }

    #[test]
    fn base_injections_of_case14() {
        let case = case14();
        let inj = InjectionSample::base(&case);
        let layout = case.layout();
        assert_eq!(inj.x.len(), 4 + 2 * 9);
        // bus 2: Pg 40 MW, Pd 21.7 MW
        assert!((inj.x[0] - (0.4 - 0.217)).abs() < 1e-12);
        let bus4 = layout.loads.iter().position(|&i| case.buses()[i].id == 4).unwrap();
        assert!((inj.x[4 + bus4] + 0.478).abs() < 1e-15);
        assert!((inj.x[4 + 9 + bus4] - 0.039).abs() < 1e-15);
    }

    #[test]
    fn zero_std_reproduces_base_demands() {
        let case = case14();
        let cfg = SamplingConfig {
            profile_buses: Some(vec![]),
            load_std_fraction: 0.0,
            ..Default::default()
        };
        let gen = ScenarioGenerator::new(&case, &cfg, ProfileSource::default()).unwrap();
        for k in 0..5 {
            assert_eq!(gen.sample(k).unwrap(), InjectionSample::base(&case));
        }
    }

    #[test]
    fn profile_reactive_ratio_is_strictly_inside_unit_interval() {
        let case = case14();
        let cfg = SamplingConfig {
            profile_bus_count: 4,
            ..Default::default()
        };
        let gen = ScenarioGenerator::new(&case, &cfg, ProfileSource::default()).unwrap();
        let layout = case.layout();
        for k in 0..200 {
            let inj = gen.sample(k).unwrap();
            for &bus in gen.profile_buses() {
                let s = layout.loads.iter().position(|&l| l == bus).unwrap();
                let (p, q) = (inj.x[4 + s], inj.x[4 + 9 + s]);
                if p != 0.0 {
                    let ratio = q / p;
                    assert!(ratio > 0.0 && ratio < 1.0, "Q/P = {ratio}");
                }
            }
        }
    }

    #[test]
    fn samples_are_reproducible_in_isolation() {
        let case = case14();
        let cfg = SamplingConfig {
            profile_bus_count: 3,
            load_std_fraction: 0.1,
            seed: 42,
            ..Default::default()
        };
        let gen = ScenarioGenerator::new(&case, &cfg, ProfileSource::default()).unwrap();
        let a = gen.sample(17).unwrap();
        let _ = gen.sample(3).unwrap();
        let again = sample_injections(&case, &cfg, ProfileSource::default(), 17).unwrap();
        assert_eq!(a, again);
        assert_ne!(a, gen.sample(18).unwrap());
    }

    #[test]
    fn default_profile_buses_are_the_largest_loads() {
        let case = case14();
        let cfg = SamplingConfig {
            profile_bus_count: 2,
            ..Default::default()
        };
        let picked = cfg.resolve_profile_buses(&case).unwrap();
        let ids: Vec<usize> = picked.iter().map(|&i| case.buses()[i].id).collect();
        // bus 4 (47.8 MW) and bus 9 (29.5 MW)
        assert_eq!(ids, vec![4, 9]);
    }

    #[test]
    fn rejects_invalid_configuration() {
        let case = case14();
        let bad_corr = SamplingConfig {
            corr_p: 1.0,
            ..Default::default()
        };
        assert!(matches!(bad_corr.validate(), Err(Error::Config(_))));
        let pv_as_profile = SamplingConfig {
            profile_buses: Some(vec![2]),
            ..Default::default()
        };
        assert!(pv_as_profile.resolve_profile_buses(&case).is_err());
    }

    #[test]
    fn equicorrelation_factor_reproduces_matrix() {
        let l = equicorrelation_factor(5, 0.8).unwrap();
        let r = &l * l.transpose();
        for i in 0..5 {
            for j in 0..5 {
                let expected = if i == j { 1.0 } else { 0.8 };
                assert!((r[(i, j)] - expected).abs() < 1e-12);
            }
        }
    }
}
