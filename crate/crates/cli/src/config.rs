use std::path::{Path, PathBuf};

use ppf_lab::metrics::Quantity;
use ppf_lab::pf::SolveOptions;
use ppf_lab::pipeline::MethodConfig;
use ppf_lab::scenario::{DatasetOptions, ProfileConfig, SamplingConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything one run needs, read from a single TOML file.
///
/// Precedence: command-line flags, then the file, then built-in defaults.
/// Relative paths in the file are resolved against the file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives sampling and every network seed.
    pub seed: u64,
    /// Output directory.
    pub out: PathBuf,
    pub case: CaseSection,
    pub sampling: SamplingConfig,
    pub solver: SolverSection,
    pub training: MethodConfig,
    pub evaluation: EvaluationSection,
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("ppf-run"),
            case: CaseSection::default(),
            sampling: SamplingConfig::default(),
            solver: SolverSection::default(),
            training: MethodConfig::default(),
            evaluation: EvaluationSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaseSection {
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub tol: f64,
    pub max_iter: usize,
    pub warm_start: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolveOptions::default();
        SolverSection {
            tol: d.tol,
            max_iter: d.max_iter,
            warm_start: false,
        }
    }
}

impl SolverSection {
    pub fn dataset_options(&self) -> DatasetOptions {
        DatasetOptions {
            solve: SolveOptions {
                tol: self.tol,
                max_iter: self.max_iter,
                initial: None,
            },
            warm_start: self.warm_start,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub quantities: Vec<Quantity>,
    /// Write the per-response Wasserstein distance files.
    pub per_response_wd: bool,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            quantities: Quantity::ALL.to_vec(),
            per_response_wd: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub gammas: Vec<f64>,
    pub alphas: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            gammas: vec![1e-4, 1e-3, 1e-2],
            alphas: vec![0.1, 1.0, 10.0],
        }
    }
}

/// Flags that override file values.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Read a config file and apply the overrides.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.case.path = base.join(&cfg.case.path);
        cfg.out = base.join(&cfg.out);
        if let ProfileConfig::Csv { path } = &mut cfg.sampling.profile {
            *path = base.join(&*path);
        }
        cfg.apply(overrides);
        Ok(cfg)
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(out) = &overrides.out {
            self.out = out.clone();
        }
        // the run seed is the only sampling seed
        self.sampling.seed = self.seed;
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.out.join("data").join("dataset.csv")
    }

    pub fn bundle_dir(&self, method: ppf_lab::pipeline::MethodId) -> PathBuf {
        self.out.join("bundles").join(method.to_string())
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out.join("reports")
    }

    pub fn sweep_dir(&self) -> PathBuf {
        self.out.join("sweep")
    }
}
