use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use ppf_lab::grid::{parse_case, NetworkCase};
use ppf_lab::metrics::{wd_csv, EvalReport, MetricsReport, Quantity, ReportRow, ResponsePair, CSV_HEADER};
use ppf_lab::pipeline::{
    angle_differences, column_std, estimate_branch_flows, load_bundle, save_bundle, split_buses, train_method,
    tune_alpha, tune_gamma, MethodId, StateEstimate, MANIFEST,
};
use ppf_lab::scenario::{build_dataset, load_dataset, save_dataset, Dataset, Part, ProfileSource};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fingerprint::report_fingerprint;
use crate::{data_fingerprint, model_fingerprint, CliError, RunConfig};

pub struct Request {
    pub methods: Vec<MethodId>,
    pub force: bool,
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| ppf_lab::Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| ppf_lab::Error::io(path, e).into())
}

fn toml_text<T: Serialize>(value: &T) -> Result<String, CliError> {
    toml::to_string(value).map_err(|e| CliError::Config(e.to_string()))
}

/// Case, its raw bytes and the data fingerprint of the current config.
fn load_case(cfg: &RunConfig) -> Result<(NetworkCase, String), CliError> {
    let path = &cfg.case.path;
    let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("cannot read case file {}: {e}", path.display())))?;
    let text = String::from_utf8_lossy(&bytes);
    let case = parse_case(&text).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
    let fp = data_fingerprint(cfg, &bytes)?;
    Ok((case, fp))
}

/// Stored dataset, refused when it was produced under another config.
fn load_current_dataset(cfg: &RunConfig, case: &NetworkCase, data_fp: &str) -> Result<Dataset, CliError> {
    let path = cfg.dataset_path();
    if !path.exists() {
        return Err(CliError::Failed(format!(
            "no dataset at {}; run gen-data first",
            path.display()
        )));
    }
    let ds = load_dataset(&path, Some(case))?;
    if ds.fingerprint != data_fp {
        return Err(CliError::Failed(format!(
            "dataset {} was generated with a different case or sampling config; rerun gen-data",
            path.display()
        )));
    }
    Ok(ds)
}

fn branch_labels(case: &NetworkCase) -> Vec<String> {
    case.in_service_branches()
        .map(|(k, br)| format!("line{}:{}-{}", k + 1, br.from_bus, br.to_bus))
        .collect()
}

pub fn gen_data(cfg: &RunConfig, _req: &Request) -> Result<(), CliError> {
    let t0 = Instant::now();
    let (case, fp) = load_case(cfg)?;
    let source = ProfileSource::from_config(&cfg.sampling.profile, case.base_mva())?;
    let mut ds = build_dataset(&case, &cfg.sampling, source, &cfg.solver.dataset_options())?;
    ds.fingerprint = fp;
    let path = cfg.dataset_path();
    std::fs::create_dir_all(path.parent().unwrap()).map_err(|e| ppf_lab::Error::io(&path, e))?;
    save_dataset(&ds, &path)?;

    println!(
        "wrote {} samples ({} train, {} validation, {} test) to {} in {:.1}s",
        ds.len(),
        ds.split.train,
        ds.split.validation,
        ds.split.test,
        path.display(),
        t0.elapsed().as_secs_f64()
    );
    println!("rejected samples (no convergence): {}", ds.rejected_count);
    print!("{}", magnitude_summary(&ds, &cfg.sweep.gammas));
    Ok(())
}

/// Spread of the training magnitudes per load bus; the input to choosing
/// the split threshold.
fn magnitude_summary(ds: &Dataset, gammas: &[f64]) -> String {
    let train = ds.part(Part::Train);
    let mut out = String::new();
    if train.len() < 2 || train.magnitudes.ncols() == 0 {
        return out;
    }
    let std = column_std(&train.magnitudes);
    let mut sorted = std.clone();
    sorted.sort_by(f64::total_cmp);
    writeln!(
        out,
        "load-bus magnitude std [pu]: min {:.3e}  median {:.3e}  max {:.3e}",
        sorted[0],
        sorted[sorted.len() / 2],
        sorted[sorted.len() - 1]
    )
    .unwrap();
    for &g in gammas {
        let n = std.iter().filter(|&&s| s > g).count();
        writeln!(out, "  buses with std above {g:.0e}: {n} of {}", std.len()).unwrap();
    }
    let mut order: Vec<usize> = (0..std.len()).collect();
    order.sort_by(|&a, &b| std[b].total_cmp(&std[a]));
    let top: Vec<String> = order
        .iter()
        .take(5)
        .map(|&i| format!("{} {:.3e}", ds.columns.magnitudes[i], std[i]))
        .collect();
    writeln!(out, "  largest: {}", top.join(", ")).unwrap();
    out
}

pub fn train(cfg: &RunConfig, req: &Request) -> Result<(), CliError> {
    let (case, data_fp) = load_case(cfg)?;
    let ds = load_current_dataset(cfg, &case, &data_fp)?;
    for &m in &req.methods {
        let dir = cfg.bundle_dir(m);
        if dir.join(MANIFEST).exists() && !req.force {
            return Err(CliError::Failed(format!(
                "bundle {m} already exists at {}; pass --force to retrain",
                dir.display()
            )));
        }
    }

    let trained: Vec<_> = req
        .methods
        .par_iter()
        .map(|&m| {
            let t0 = Instant::now();
            train_method(m, &case, &ds, &cfg.training, cfg.seed).map(|b| (b, t0.elapsed()))
        })
        .collect::<Result<_, _>>()?;

    for (bundle, elapsed) in trained {
        let m = bundle.method;
        let dir = cfg.bundle_dir(m);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| ppf_lab::Error::io(&dir, e))?;
        }
        save_bundle(&bundle, &dir, &model_fingerprint(cfg, &data_fp, m)?)?;
        let mut line = format!("{m}: {:.1}s", elapsed.as_secs_f64());
        if let Some(split) = &bundle.split {
            write!(
                line,
                ", {} linear / {} network magnitude buses",
                split.small_std.len(),
                split.big_std.len()
            )
            .unwrap();
        }
        for c in &bundle.components {
            if let Some(h) = &c.history {
                write!(line, ", {} {} epochs (best {})", c.name, h.train.len(), h.best_epoch).unwrap();
            }
        }
        println!("{line} -> {}", dir.display());
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportManifest {
    fingerprint: String,
    seed: String,
    methods: Vec<MethodEntry>,
    files: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MethodEntry {
    method: MethodId,
    fingerprint: String,
}

struct Responses {
    angles: DMatrix<f64>,
    differences: DMatrix<f64>,
    magnitudes: DMatrix<f64>,
    active: DMatrix<f64>,
    reactive: DMatrix<f64>,
}

impl Responses {
    fn of(case: &NetworkCase, est: StateEstimate) -> Result<Self, CliError> {
        let flows = estimate_branch_flows(case, &est)?;
        Ok(Responses {
            differences: angle_differences(case, &est.angles)?,
            angles: est.angles,
            magnitudes: est.magnitudes,
            active: flows.active,
            reactive: flows.reactive,
        })
    }

    fn get(&self, q: Quantity) -> &DMatrix<f64> {
        match q {
            Quantity::Angle => &self.angles,
            Quantity::AngleDifference => &self.differences,
            Quantity::Magnitude => &self.magnitudes,
            Quantity::ActiveFlow => &self.active,
            Quantity::ReactiveFlow => &self.reactive,
        }
    }
}

/// Bundles of the requested methods, each checked against the current
/// config. Returns them with their fingerprints.
fn load_current_bundles(
    cfg: &RunConfig,
    data_fp: &str,
    methods: &[MethodId],
) -> Result<Vec<(ppf_lab::pipeline::MethodBundle, String)>, CliError> {
    let mut out = Vec::with_capacity(methods.len());
    for &m in methods {
        let dir = cfg.bundle_dir(m);
        if !dir.join(MANIFEST).exists() {
            return Err(CliError::Failed(format!(
                "bundle {m} not found at {}; run train first",
                dir.display()
            )));
        }
        let (bundle, fp) = load_bundle(&dir)?;
        let expected = model_fingerprint(cfg, data_fp, m)?;
        if fp != expected {
            return Err(CliError::Failed(format!(
                "bundle {m} at {} was trained under a different config; retrain with --force",
                dir.display()
            )));
        }
        if bundle.method != m {
            return Err(CliError::Failed(format!("bundle at {} holds {}", dir.display(), bundle.method)));
        }
        out.push((bundle, fp));
    }
    Ok(out)
}

pub fn eval(cfg: &RunConfig, req: &Request) -> Result<(), CliError> {
    let (case, data_fp) = load_case(cfg)?;
    let ds = load_current_dataset(cfg, &case, &data_fp)?;
    let bundles = load_current_bundles(cfg, &data_fp, &req.methods)?;
    let test = ds.part(Part::Test);
    let truth = Responses::of(&case, StateEstimate::from_samples(&test))?;
    let quantities = &cfg.evaluation.quantities;

    let scored: Vec<Vec<ReportRow>> = bundles
        .par_iter()
        .map(|(bundle, _)| {
            let est = Responses::of(&case, bundle.predict_states(&test.inputs)?)?;
            quantities
                .iter()
                .map(|&q| {
                    let metrics = MetricsReport::compute(ResponsePair::new(est.get(q), truth.get(q))?)?;
                    Ok(ReportRow {
                        method: bundle.method.to_string(),
                        quantity: q,
                        metrics,
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()
        })
        .collect::<Result<_, _>>()?;
    let report = EvalReport {
        rows: scored.into_iter().flatten().collect(),
    };

    let dir = cfg.report_dir();
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| ppf_lab::Error::io(&dir, e))?;
    }
    let mut files = vec!["metrics.csv".to_string(), "metrics.txt".to_string()];
    write(&dir.join("metrics.csv"), &report.to_csv())?;
    write(&dir.join("metrics.txt"), &report.to_text())?;
    if cfg.evaluation.per_response_wd {
        let branches = branch_labels(&case);
        for row in &report.rows {
            let labels = match row.quantity {
                Quantity::Angle => &ds.columns.angles,
                Quantity::Magnitude => &ds.columns.magnitudes,
                _ => &branches,
            };
            let name = format!("wd/{}_{}.csv", row.method, row.quantity.name());
            write(&dir.join(&name), &wd_csv(&row.metrics, labels))?;
            files.push(name);
        }
    }
    let models: Vec<(MethodId, String)> = bundles.iter().map(|(b, fp)| (b.method, fp.clone())).collect();
    let manifest = ReportManifest {
        fingerprint: report_fingerprint(cfg, &models)?,
        seed: cfg.seed.to_string(),
        methods: models
            .into_iter()
            .map(|(method, fingerprint)| MethodEntry { method, fingerprint })
            .collect(),
        files,
    };
    write(&dir.join(MANIFEST), &toml_text(&manifest)?)?;
    print!("{}", report.to_text());
    println!("reports written to {}", dir.display());
    Ok(())
}

pub fn sweep(cfg: &RunConfig, _req: &Request) -> Result<(), CliError> {
    let (case, data_fp) = load_case(cfg)?;
    let ds = load_current_dataset(cfg, &case, &data_fp)?;
    let train = ds.part(Part::Train);
    let validation = ds.part(Part::Validation);
    let m4 = &cfg.training.m4;

    let gamma = tune_gamma(&cfg.sweep.gammas, &train, &validation, &m4.magnitude, cfg.seed)?;
    let mut gamma_csv = String::from("gamma,network_buses,validation_magnitude_rmse\n");
    for &(g, score) in &gamma.scores {
        let split = split_buses(&train.magnitudes, g)?;
        writeln!(gamma_csv, "{g:.16e},{},{score:.16e}", split.big_std.len()).unwrap();
    }
    let alpha = tune_alpha(&cfg.sweep.alphas, &case, &train, &validation, &m4.angle, cfg.seed)?;
    let mut alpha_csv = String::from("alpha,validation_flow_rmse\n");
    for &(a, score) in &alpha.scores {
        writeln!(alpha_csv, "{a:.16e},{score:.16e}").unwrap();
    }

    let dir = cfg.sweep_dir();
    write(&dir.join("gamma.csv"), &gamma_csv)?;
    write(&dir.join("alpha.csv"), &alpha_csv)?;
    #[derive(Serialize)]
    struct SweepManifest<'a> {
        fingerprint: &'a str,
        seed: String,
        gamma: f64,
        gamma_degenerate: bool,
        alpha: f64,
    }
    let manifest = SweepManifest {
        fingerprint: &data_fp,
        seed: cfg.seed.to_string(),
        gamma: gamma.gamma,
        gamma_degenerate: gamma.degenerate,
        alpha: alpha.alpha,
    };
    write(&dir.join(MANIFEST), &toml_text(&manifest)?)?;

    print!("gamma grid:\n{gamma_csv}alpha grid:\n{alpha_csv}");
    println!("selected gamma {:e}, alpha {:e}", gamma.gamma, alpha.alpha);
    if gamma.degenerate {
        println!("no candidate threshold puts any bus on the network side; magnitudes are purely linear");
    }
    println!("results written to {}", dir.display());
    Ok(())
}

fn parse_metrics_csv(path: &Path, text: &str) -> Result<EvalReport, CliError> {
    let bad = |line: usize, what: &str| CliError::Failed(format!("{}: line {line}: {what}", path.display()));
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(bad(1, "unexpected header"));
    }
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad(k + 2, "expected 6 fields"));
        }
        let quantity = Quantity::ALL
            .into_iter()
            .find(|q| q.name() == f[1])
            .ok_or_else(|| bad(k + 2, "unknown quantity"))?;
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(k + 2, "invalid number"));
        rows.push(ReportRow {
            method: f[0].to_string(),
            quantity,
            metrics: MetricsReport {
                avg_rmse: num(f[2])?,
                awd: num(f[3])?,
                e1: num(f[4])?,
                e2: num(f[5])?,
                per_response_wd: Vec::new(),
            },
        });
    }
    Ok(EvalReport { rows })
}

pub fn report(cfg: &RunConfig, _req: &Request) -> Result<(), CliError> {
    let dir = cfg.report_dir();
    let read = |name: &str| {
        let path = dir.join(name);
        std::fs::read_to_string(&path).map_err(|_| {
            CliError::Failed(format!("no evaluation report at {}; run eval first", path.display()))
        })
    };
    let manifest: ReportManifest =
        toml::from_str(&read(MANIFEST)?).map_err(|e| CliError::Failed(format!("{}: {e}", dir.display())))?;
    let (_, data_fp) = load_case(cfg)?;
    let models = manifest
        .methods
        .iter()
        .map(|e| Ok((e.method, model_fingerprint(cfg, &data_fp, e.method)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    if report_fingerprint(cfg, &models)? != manifest.fingerprint {
        return Err(CliError::Failed(format!(
            "report in {} was produced under a different config; rerun eval",
            dir.display()
        )));
    }
    let path = dir.join("metrics.csv");
    let report = parse_metrics_csv(&path, &read("metrics.csv")?)?;
    print!("{}", report.to_text());
    println!("lowest error per quantity (avg_rmse / awd):");
    for q in Quantity::ALL {
        let rows: Vec<&ReportRow> = report.rows.iter().filter(|r| r.quantity == q).collect();
        let best = |key: fn(&MetricsReport) -> f64| {
            rows.iter()
                .min_by(|a, b| key(&a.metrics).total_cmp(&key(&b.metrics)))
                .map(|r| r.method.as_str())
        };
        if let (Some(r), Some(w)) = (best(|m| m.avg_rmse), best(|m| m.awd)) {
            println!("  {:<17} {r} / {w}", q.name());
        }
    }
    println!("fingerprint {}", manifest.fingerprint);
    Ok(())
}
