//! On-disk layout of a trained method:
//!
//! ```text
//! <dir>/manifest.toml        method, split, alpha, seeds, component list
//! <dir>/<component>.json     one serialized model per component
//! <dir>/<component>_loss.csv per-epoch losses of network components
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BusSplit, Component, MethodBundle, MethodId, Model};
use crate::error::{ensure, Error, Result};
use crate::learn::{LinearModel, LossHistory, MlpModel};

pub const MANIFEST: &str = "manifest.toml";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    method: MethodId,
    fingerprint: String,
    /// Seeds are strings because TOML integers are signed 64-bit.
    run_seed: String,
    n_inputs: usize,
    n_angles: usize,
    n_magnitudes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<BusSplit>,
    components: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    kind: String,
    file: String,
    outputs: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    init_seed: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    shuffle_seed: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    best_epoch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    loss_history: Option<String>,
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write a bundle into `dir`, creating it if needed.
pub fn save_bundle(bundle: &MethodBundle, dir: &Path, fingerprint: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(bundle.components.len());
    for c in &bundle.components {
        let file = format!("{}.json", c.name);
        let (kind, text) = match &c.model {
            Model::Linear(m) => ("linear", m.to_json(fingerprint)),
            Model::Mlp(m) => ("mlp", m.to_json(fingerprint)),
        };
        write(&dir.join(&file), &text)?;
        let loss_history = match &c.history {
            Some(h) => {
                let name = format!("{}_loss.csv", c.name);
                write(&dir.join(&name), &h.to_csv())?;
                Some(name)
            }
            None => None,
        };
        entries.push(Entry {
            name: c.name.clone(),
            kind: kind.into(),
            file,
            outputs: c.outputs.clone(),
            init_seed: c.seeds.map(|s| s.0.to_string()),
            shuffle_seed: c.seeds.map(|s| s.1.to_string()),
            best_epoch: c.history.as_ref().map(|h| h.best_epoch),
            loss_history,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        method: bundle.method,
        fingerprint: fingerprint.into(),
        run_seed: bundle.run_seed.to_string(),
        n_inputs: bundle.n_inputs,
        n_angles: bundle.n_angles,
        n_magnitudes: bundle.n_magnitudes,
        alpha: bundle.alpha,
        split: bundle.split.clone(),
        components: entries,
    };
    let path = dir.join(MANIFEST);
    let text = toml::to_string(&manifest).map_err(|e| Error::format(&path, e.to_string()))?;
    write(&path, &text)
}

fn parse_seed(path: &Path, s: &str) -> Result<u64> {
    s.parse().map_err(|_| Error::format(path, format!("bad seed {s:?}")))
}

fn read_history(path: &Path, best_epoch: usize) -> Result<LossHistory> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut h = LossHistory {
        best_epoch,
        ..Default::default()
    };
    for rec in reader.deserialize::<(usize, f64, f64)>() {
        let (_, t, v) = rec.map_err(|e| Error::format(path, e.to_string()))?;
        h.train.push(t);
        h.validation.push(v);
    }
    Ok(h)
}

/// Read a bundle written by [`save_bundle`]; returns it with the stored
/// fingerprint.
pub fn load_bundle(dir: &Path) -> Result<(MethodBundle, String)> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = toml::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    ensure!(
        m.format_version == FORMAT_VERSION,
        Error::format(&path, format!("unsupported format version {}", m.format_version))
    );
    let mut components = Vec::with_capacity(m.components.len());
    for e in m.components {
        let file = dir.join(&e.file);
        let text = std::fs::read_to_string(&file).map_err(|err| Error::io(&file, err))?;
        let (model, fp) = match e.kind.as_str() {
            "linear" => LinearModel::from_json(&text).map(|(m, fp)| (Model::Linear(m), fp)),
            "mlp" => MlpModel::from_json(&text).map(|(m, fp)| (Model::Mlp(m), fp)),
            other => Err(format!("unknown component kind {other:?}")),
        }
        .map_err(|msg| Error::format(&file, msg))?;
        ensure!(
            fp == m.fingerprint,
            Error::format(&file, "component fingerprint differs from the manifest")
        );
        let seeds = match (&e.init_seed, &e.shuffle_seed) {
            (Some(a), Some(b)) => Some((parse_seed(&path, a)?, parse_seed(&path, b)?)),
            _ => None,
        };
        let history = match &e.loss_history {
            Some(name) => Some(read_history(&dir.join(name), e.best_epoch.unwrap_or(0))?),
            None => None,
        };
        components.push(Component {
            name: e.name,
            model,
            outputs: e.outputs,
            seeds,
            history,
        });
    }
    let bundle = MethodBundle::new(
        m.method,
        m.n_inputs,
        m.n_angles,
        m.n_magnitudes,
        components,
        m.split,
        m.alpha,
        parse_seed(&path, &m.run_seed)?,
    )
    .map_err(|e| Error::format(&path, e.to_string()))?;
    Ok((bundle, m.fingerprint))
}
