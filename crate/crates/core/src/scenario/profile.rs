use std::path::{Path, PathBuf};

use rand::distr::Open01;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Beta;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::grid::NetworkCase;

/// Synthetic photovoltaic profile.
///
/// Each sample picks a daylight phase `t ~ Uniform(0, 1)` shared by all
/// buses and a per-bus cloud factor `c ~ Beta(cloud_alpha, cloud_beta)`.
/// A bus with base demand `d` then injects
/// `penetration · d · sin(π t) · c − d`, i.e. PV output sized relative to
/// the local load, net of that load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticPv {
    pub penetration: f64,
    pub cloud_alpha: f64,
    pub cloud_beta: f64,
}

impl Default for SyntheticPv {
    fn default() -> Self {
        SyntheticPv {
            penetration: 2.0,
            cloud_alpha: 2.0,
            cloud_beta: 1.0,
        }
    }
}

/// User-supplied profile: one column per bus, one row per sample, values in
/// MW of net active injection.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileTable {
    pub bus_ids: Vec<usize>,
    /// Per-unit rows.
    pub rows: Vec<Vec<f64>>,
}

impl ProfileTable {
    /// Read a profile CSV. The header holds bus numbers, optionally
    /// prefixed with `bus:`.
    pub fn from_csv(path: &Path, base_mva: f64) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
        let bus_ids = headers
            .iter()
            .map(|h| {
                h.trim_start_matches("bus:")
                    .parse::<usize>()
                    .map_err(|_| Error::format(path, format!("header '{h}' is not a bus number")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| csv_error(path, e))?;
            let row = record
                .iter()
                .map(|v| {
                    v.parse::<f64>()
                        .map(|mw| mw / base_mva)
                        .map_err(|_| Error::format(path, format!("invalid value '{v}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(ProfileTable { bus_ids, rows })
    }

    pub(super) fn check_against(&self, case: &NetworkCase, profile_buses: &[usize]) -> Result<()> {
        for &bus in profile_buses {
            let id = case.buses()[bus].id;
            ensure!(
                self.bus_ids.contains(&id),
                Error::Config(format!("profile table has no column for bus {id}"))
            );
        }
        Ok(())
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

/// Where profile-bus active injections come from.
#[derive(Clone, Debug, PartialEq)]
pub enum ProfileSource {
    Synthetic(SyntheticPv),
    Table(ProfileTable),
}

impl Default for ProfileSource {
    fn default() -> Self {
        ProfileSource::Synthetic(SyntheticPv::default())
    }
}

/// Serializable form of a [`ProfileSource`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileConfig {
    Synthetic(SyntheticPv),
    Csv { path: PathBuf },
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig::Synthetic(SyntheticPv::default())
    }
}

impl ProfileSource {
    pub fn from_config(cfg: &ProfileConfig, base_mva: f64) -> Result<Self> {
        Ok(match cfg {
            ProfileConfig::Synthetic(pv) => ProfileSource::Synthetic(pv.clone()),
            ProfileConfig::Csv { path } => ProfileSource::Table(ProfileTable::from_csv(path, base_mva)?),
        })
    }

    pub(super) fn draw(
        &self,
        case: &NetworkCase,
        buses: &[usize],
        k: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        match self {
            ProfileSource::Synthetic(pv) => {
                let cloud = Beta::new(pv.cloud_alpha, pv.cloud_beta)
                    .map_err(|e| Error::Config(format!("cloud factor distribution: {e}")))?;
                let t: f64 = rng.sample(Open01);
                let shape = (std::f64::consts::PI * t).sin();
                Ok(buses
                    .iter()
                    .map(|&b| {
                        let d = case.buses()[b].p_demand;
                        let c: f64 = rng.sample(cloud);
                        pv.penetration * d * shape * c - d
                    })
                    .collect())
            }
            ProfileSource::Table(table) => {
                let row = table.rows.get(k).ok_or_else(|| {
                    Error::Config(format!("profile table has {} rows, sample {k} requested", table.rows.len()))
                })?;
                Ok(buses
                    .iter()
                    .map(|&b| {
                        let id = case.buses()[b].id;
                        let col = table.bus_ids.iter().position(|&c| c == id).unwrap();
                        row[col]
                    })
                    .collect())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use std::io::Write;

    #[test]
    fn reads_profile_csv_in_mw() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "bus:4,9").unwrap();
        writeln!(file, "10.0,-5").unwrap();
        writeln!(file, "20.5,0").unwrap();
        let table = ProfileTable::from_csv(file.path(), 100.0).unwrap();
        assert_eq!(table.bus_ids, vec![4, 9]);
        assert_eq!(table.rows, vec![vec![0.1, -0.05], vec![0.205, 0.0]]);
    }

    #[test]
    fn table_rows_feed_the_requested_buses() {
        let case = crate::grid::parse_case(include_str!("../../../../cases/case14.m")).unwrap();
        let b9 = case.bus_index(9).unwrap();
        let b4 = case.bus_index(4).unwrap();
        let source = ProfileSource::Table(ProfileTable {
            bus_ids: vec![4, 9],
            rows: vec![vec![0.1, 0.2]],
        });
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = source.draw(&case, &[b9, b4], 0, &mut rng).unwrap();
        assert_eq!(p, vec![0.2, 0.1]);
        assert!(source.draw(&case, &[b9], 1, &mut rng).is_err());
    }

    #[test]
    fn synthetic_output_is_bounded_by_capacity() {
        let case = crate::grid::parse_case(include_str!("../../../../cases/case14.m")).unwrap();
        let b4 = case.bus_index(4).unwrap();
        let d = case.buses()[b4].p_demand;
        let pv = SyntheticPv::default();
        let source = ProfileSource::Synthetic(pv.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in 0..500 {
            let p = source.draw(&case, &[b4], k, &mut rng).unwrap()[0];
            assert!(p >= -d && p <= (pv.penetration - 1.0) * d);
        }
    }
}
