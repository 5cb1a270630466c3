use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ProfileSource, SamplingConfig, ScenarioGenerator};
use crate::error::{ensure, Error, Result};
use crate::grid::{build_ybus, NetworkCase};
use crate::pf::{solve_pf, PfState, SolveOptions};

const FORMAT_VERSION: u32 = 1;
/// Samples that fail to converge may make up at most this share of a run.
const MAX_REJECTION_RATE: f64 = 0.05;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }

    fn range(&self, part: Part) -> std::ops::Range<usize> {
        match part {
            Part::Train => 0..self.train,
            Part::Validation => self.train..self.train + self.validation,
            Part::Test => self.train + self.validation..self.total(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Train,
    Validation,
    Test,
}

/// Row-aligned inputs and ground-truth outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    /// `n × (N_g + 2 N_l)` injections.
    pub inputs: DMatrix<f64>,
    /// `n × (N − 1)` angles relative to the slack bus, radians.
    pub angles: DMatrix<f64>,
    /// `n × N_l` PQ-bus magnitudes, per-unit.
    pub magnitudes: DMatrix<f64>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Columns {
    pub inputs: Vec<String>,
    pub angles: Vec<String>,
    pub magnitudes: Vec<String>,
}

impl Columns {
    pub fn for_case(case: &NetworkCase) -> Self {
        let layout = case.layout();
        let id = |i: usize| case.buses()[i].id;
        let mut inputs: Vec<String> = layout.generators.iter().map(|&i| format!("p_g:{}", id(i))).collect();
        inputs.extend(layout.loads.iter().map(|&i| format!("p_l:{}", id(i))));
        inputs.extend(layout.loads.iter().map(|&i| format!("q_l:{}", id(i))));
        Columns {
            inputs,
            angles: layout.angle_buses().map(|i| format!("theta:{}", id(i))).collect(),
            magnitudes: layout.loads.iter().map(|&i| format!("vm:{}", id(i))).collect(),
        }
    }

    fn all(&self) -> impl Iterator<Item = &String> {
        self.inputs.iter().chain(&self.angles).chain(&self.magnitudes)
    }
}

/// Monte Carlo dataset: converged samples in generation order, partitioned
/// into contiguous train / validation / test blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Samples,
    pub split: SplitSizes,
    pub rejected_count: usize,
    pub columns: Columns,
    pub sampling: SamplingConfig,
    /// Fingerprint of the configuration that produced the data; empty when
    /// the caller did not supply one.
    pub fingerprint: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn part(&self, part: Part) -> Samples {
        let r = self.split.range(part);
        let rows = |m: &DMatrix<f64>| m.rows(r.start, r.len()).into_owned();
        Samples {
            inputs: rows(&self.samples.inputs),
            angles: rows(&self.samples.angles),
            magnitudes: rows(&self.samples.magnitudes),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct DatasetOptions {
    pub solve: SolveOptions,
    /// Start every solve from the solved base case instead of a flat start.
    pub warm_start: bool,
}

/// Draw `cfg.sample_count` scenarios, solve each, and keep the first
/// `cfg.split.total()` converged ones.
///
/// Samples are solved in parallel on the current rayon pool; the row order
/// depends only on the sample index.
pub fn build_dataset(
    case: &NetworkCase,
    cfg: &SamplingConfig,
    source: ProfileSource,
    opts: &DatasetOptions,
) -> Result<Dataset> {
    let total = cfg.split.total();
    ensure!(
        cfg.sample_count >= total,
        Error::Config(format!(
            "sample_count {} is smaller than the split total {total}",
            cfg.sample_count
        ))
    );
    let generator = ScenarioGenerator::new(case, cfg, source)?;
    let y = build_ybus(case)?;

    let mut solve = opts.solve.clone();
    if opts.warm_start {
        let base = solve_pf(case, &y, &super::InjectionSample::base(case), &solve)?;
        ensure!(
            base.converged,
            Error::Dataset("base case does not converge; cannot warm start".into())
        );
        solve.initial = Some(base.state);
    }

    let solved: Vec<Option<(Vec<f64>, PfState)>> = (0..cfg.sample_count)
        .into_par_iter()
        .map(|k| {
            let inj = generator.sample(k)?;
            Ok(match solve_pf(case, &y, &inj, &solve) {
                Ok(sol) if sol.converged => Some((inj.x, sol.state)),
                _ => None,
            })
        })
        .collect::<Result<_>>()?;

    let rejected_count = solved.iter().filter(|s| s.is_none()).count();
    if cfg.sample_count > 0 {
        let rate = rejected_count as f64 / cfg.sample_count as f64;
        ensure!(
            rate <= MAX_REJECTION_RATE,
            Error::Dataset(format!(
                "{rejected_count} of {} samples failed to converge ({:.1}%)",
                cfg.sample_count,
                100.0 * rate
            ))
        );
    }
    let kept: Vec<&(Vec<f64>, PfState)> = solved.iter().flatten().take(total).collect();
    ensure!(
        kept.len() == total,
        Error::Dataset(format!(
            "only {} converged samples for a split of {total}; raise sample_count",
            kept.len()
        ))
    );

    let layout = case.layout();
    let slack = layout.slack;
    let angle_buses: Vec<usize> = layout.angle_buses().collect();
    let inputs = DMatrix::from_fn(total, layout.n_inputs(), |r, c| kept[r].0[c]);
    let angles = DMatrix::from_fn(total, angle_buses.len(), |r, c| {
        let st = &kept[r].1;
        st.v_ang[angle_buses[c]] - st.v_ang[slack]
    });
    let magnitudes = DMatrix::from_fn(total, layout.loads.len(), |r, c| kept[r].1.v_mag[layout.loads[c]]);

    Ok(Dataset {
        samples: Samples {
            inputs,
            angles,
            magnitudes,
        },
        split: cfg.split,
        rejected_count,
        columns: Columns::for_case(case),
        sampling: cfg.clone(),
        fingerprint: String::new(),
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetMeta {
    format_version: u32,
    rows: usize,
    input_columns: usize,
    angle_columns: usize,
    magnitude_columns: usize,
    rejected_count: usize,
    fingerprint: String,
    split: SplitSizes,
    sampling: SamplingConfig,
}

/// Sidecar path holding the metadata of a dataset CSV.
pub fn metadata_path(path: &Path) -> PathBuf {
    path.with_extension("meta.toml")
}

/// Write the dataset as CSV plus a TOML metadata sidecar.
///
/// Values are printed with 17 significant digits, which round-trips every
/// `f64` exactly, so loading and saving again reproduces the same bytes.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    writer
        .write_record(ds.columns.all())
        .map_err(|e| Error::format(path, e.to_string()))?;
    let s = &ds.samples;
    for r in 0..ds.len() {
        let row = s
            .inputs
            .row(r)
            .iter()
            .chain(s.angles.row(r).iter())
            .chain(s.magnitudes.row(r).iter())
            .map(|v| format!("{v:.16e}"))
            .collect::<Vec<_>>();
        writer.write_record(&row).map_err(|e| Error::format(path, e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;

    let meta = DatasetMeta {
        format_version: FORMAT_VERSION,
        rows: ds.len(),
        input_columns: ds.columns.inputs.len(),
        angle_columns: ds.columns.angles.len(),
        magnitude_columns: ds.columns.magnitudes.len(),
        rejected_count: ds.rejected_count,
        fingerprint: ds.fingerprint.clone(),
        split: ds.split,
        sampling: ds.sampling.clone(),
    };
    let meta_path = metadata_path(path);
    let text = toml::to_string(&meta).map_err(|e| Error::format(&meta_path, e.to_string()))?;
    std::fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))
}

/// Read a dataset written by [`save_dataset`].
///
/// When `case` is given, the column header must match that case's bus
/// layout.
pub fn load_dataset(path: &Path, case: Option<&NetworkCase>) -> Result<Dataset> {
    let meta_path = metadata_path(path);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: DatasetMeta = toml::from_str(&text).map_err(|e| Error::format(&meta_path, e.to_string()))?;
    ensure!(
        meta.format_version == FORMAT_VERSION,
        Error::format(&meta_path, format!("unsupported format version {}", meta.format_version))
    );
    ensure!(
        meta.split.total() == meta.rows,
        Error::format(&meta_path, "split sizes do not add up to the row count")
    );

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let (ni, na, nm) = (meta.input_columns, meta.angle_columns, meta.magnitude_columns);
    ensure!(
        header.len() == ni + na + nm,
        Error::format(
            path,
            format!("header has {} columns, metadata expects {}", header.len(), ni + na + nm)
        )
    );
    let columns = Columns {
        inputs: header[..ni].to_vec(),
        angles: header[ni..ni + na].to_vec(),
        magnitudes: header[ni + na..].to_vec(),
    };
    if let Some(case) = case {
        ensure!(
            columns == Columns::for_case(case),
            Error::format(path, "column header does not match the case's bus layout")
        );
    }

    let mut values = Vec::with_capacity(meta.rows * header.len());
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        ensure!(
            record.len() == header.len(),
            Error::format(path, format!("row {} has {} values", rows + 1, record.len()))
        );
        for v in record.iter() {
            values.push(
                v.parse::<f64>()
                    .map_err(|_| Error::format(path, format!("row {}: invalid value '{v}'", rows + 1)))?,
            );
        }
        rows += 1;
    }
    ensure!(
        rows == meta.rows,
        Error::format(path, format!("found {rows} rows, metadata records {}", meta.rows))
    );
    let width = header.len();
    let block = |offset: usize, cols: usize| DMatrix::from_fn(rows, cols, |r, c| values[r * width + offset + c]);

    Ok(Dataset {
        samples: Samples {
            inputs: block(0, ni),
            angles: block(ni, na),
            magnitudes: block(ni + na, nm),
        },
        split: meta.split,
        rejected_count: meta.rejected_count,
        columns,
        sampling: meta.sampling,
        fingerprint: meta.fingerprint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::parse_case;
    use crate::pf::{mismatch, PfState};
    use crate::scenario::InjectionSample;

    fn case14() -> NetworkCase {
        parse_case(include_str!("../../../../cases/case14.m")).unwrap()
    }

    fn small_config() -> SamplingConfig {
        SamplingConfig {
            profile_bus_count: 4,
            load_std_fraction: 0.05,
            seed: 9,
            sample_count: 40,
            split: SplitSizes {
                train: 20,
                validation: 10,
                test: 10,
            },
            ..Default::default()
        }
    }

    fn state_of(case: &NetworkCase, ds: &Dataset, r: usize) -> PfState {
        let layout = case.layout();
        let mut st = PfState::flat(case);
        for (c, bus) in layout.angle_buses().enumerate() {
            st.v_ang[bus] = ds.samples.angles[(r, c)] + case.slack_angle();
        }
        for (c, &bus) in layout.loads.iter().enumerate() {
            st.v_mag[bus] = ds.samples.magnitudes[(r, c)];
        }
        st
    }

    #[test]
    fn rows_satisfy_nodal_balance() {
        let case = case14();
        let ds = build_dataset(&case, &small_config(), ProfileSource::default(), &DatasetOptions::default()).unwrap();
        assert_eq!(ds.len(), 40);
        assert_eq!(ds.rejected_count, 0);
        let y = build_ybus(&case).unwrap();
        for r in 0..ds.len() {
            let inj = InjectionSample {
                x: ds.samples.inputs.row(r).iter().copied().collect(),
            };
            let f = mismatch(&case, &y, &state_of(&case, &ds, r), &inj).unwrap();
            assert!(f.iter().all(|v| v.abs() <= 1e-8));
        }
    }

    #[test]
    fn parts_are_contiguous_blocks() {
        let case = case14();
        let ds = build_dataset(&case, &small_config(), ProfileSource::default(), &DatasetOptions::default()).unwrap();
        let test = ds.part(Part::Test);
        assert_eq!(test.len(), 10);
        assert_eq!(test.inputs.row(0), ds.samples.inputs.row(30));
        assert_eq!(ds.part(Part::Validation).angles.row(9), ds.samples.angles.row(29));
    }

    #[test]
    fn warm_start_gives_same_data_within_tolerance() {
        let case = case14();
        let cfg = small_config();
        let cold = build_dataset(&case, &cfg, ProfileSource::default(), &DatasetOptions::default()).unwrap();
        let warm = build_dataset(
            &case,
            &cfg,
            ProfileSource::default(),
            &DatasetOptions {
                warm_start: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(cold.samples.inputs, warm.samples.inputs);
        assert!((cold.samples.magnitudes.clone() - warm.samples.magnitudes).abs().max() < 1e-8);
    }

    #[test]
    fn sample_count_below_split_is_rejected() {
        let case = case14();
        let mut cfg = small_config();
        cfg.sample_count = 10;
        let err = build_dataset(&case, &cfg, ProfileSource::default(), &DatasetOptions::default());
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn save_load_round_trip_is_exact_and_byte_stable() {
        let case = case14();
        let mut ds = build_dataset(&case, &small_config(), ProfileSource::default(), &DatasetOptions::default()).unwrap();
        ds.fingerprint = "abc123".into();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path, Some(&case)).unwrap();
        assert_eq!(back, ds);

        let again = dir.path().join("again.csv");
        save_dataset(&back, &again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn empty_dataset_round_trips() {
        let case = case14();
        let cfg = SamplingConfig {
            sample_count: 0,
            split: SplitSizes::default(),
            ..small_config()
        };
        let ds = build_dataset(&case, &cfg, ProfileSource::default(), &DatasetOptions::default()).unwrap();
        assert!(ds.is_empty());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        save_dataset(&ds, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(load_dataset(&path, Some(&case)).unwrap(), ds);
    }

    #[test]
    fn inconsistent_column_count_is_a_format_error() {
        let case = case14();
        let ds = build_dataset(&case, &small_config(), ProfileSource::default(), &DatasetOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        save_dataset(&ds, &path).unwrap();
        let meta = metadata_path(&path);
        let text = std::fs::read_to_string(&meta).unwrap().replace("input_columns = 22", "input_columns = 21");
        std::fs::write(&meta, text).unwrap();
        assert!(matches!(load_dataset(&path, None), Err(Error::Format { .. })));
    }

    #[test]
    fn header_from_another_case_is_a_format_error() {
        let case = case14();
        let ds = build_dataset(&case, &small_config(), ProfileSource::default(), &DatasetOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        save_dataset(&ds, &path).unwrap();
        let other = parse_case(include_str!("../../../../cases/case30.m")).unwrap();
        assert!(matches!(load_dataset(&path, Some(&other)), Err(Error::Format { .. })));
    }
}
