//! Command-line pipeline around `ppf-lab`.
//!
//! ```text
//! ppf-lab <gen-data|train|eval|sweep|report> --config run.toml
//!         [--seed N] [--methods M1,M2,M3,M4] [--out DIR] [--force]
//! ```
//!
//! Every stage reads the same TOML file (see [`RunConfig`]). Stages
//! communicate through files under the output directory:
//!
//! ```text
//! data/dataset.csv, data/dataset.meta.toml      gen-data
//! bundles/<method>/...                          train
//! reports/metrics.csv, metrics.txt, wd/*.csv    eval
//! sweep/gamma.csv, sweep/alpha.csv              sweep
//! ```
//!
//! Each artifact records the fingerprint of the configuration that produced
//! it, and later stages refuse inputs whose fingerprint no longer matches.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage or
//! configuration error. `PPF_LAB_THREADS` caps the worker count.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ppf_lab::pipeline::MethodId;

mod commands;
mod config;
mod fingerprint;

pub use config::{CaseSection, EvaluationSection, Overrides, RunConfig, SolverSection, SweepSection};
pub use fingerprint::{data_fingerprint, model_fingerprint};

pub const THREADS_VAR: &str = "PPF_LAB_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Runtime(#[from] ppf_lab::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Runtime(ppf_lab::Error::Config(_)) => 2,
            CliError::Failed(_) | CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ppf-lab", version, about = "Data-driven probabilistic power flow experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample injections, solve power flows, write the dataset.
    GenData(Common),
    /// Train the requested methods on the stored dataset.
    Train(Common),
    /// Score trained methods on the test split.
    Eval(Common),
    /// Validation grids for the split threshold and the multi-task weight.
    Sweep(Common),
    /// Print the stored evaluation tables.
    Report(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated method ids.
    #[arg(long, value_delimiter = ',', default_value = "M1,M2,M3,M4")]
    methods: Vec<MethodId>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite existing bundles.
    #[arg(long)]
    force: bool,
}

fn thread_count() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!("{THREADS_VAR} must be a positive integer, got {v:?}"))),
        },
    }
}

/// Parse `args` (including the program name) and run the subcommand.
/// Progress and summaries go to standard output.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.render().to_string())),
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count()? {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    pool.install(|| dispatch(cli.command))
}

type Stage = fn(&RunConfig, &commands::Request) -> Result<(), CliError>;

fn dispatch(command: Command) -> Result<(), CliError> {
    let (common, stage): (Common, Stage) = match command {
        Command::GenData(c) => (c, commands::gen_data),
        Command::Train(c) => (c, commands::train),
        Command::Eval(c) => (c, commands::eval),
        Command::Sweep(c) => (c, commands::sweep),
        Command::Report(c) => (c, commands::report),
    };
    let overrides = Overrides {
        seed: common.seed,
        out: common.out,
    };
    let cfg = RunConfig::load(&common.config, &overrides)?;
    let mut methods = common.methods;
    methods.sort();
    methods.dedup();
    stage(
        &cfg,
        &commands::Request {
            methods,
            force: common.force,
        },
    )
}
