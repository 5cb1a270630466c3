//! The four estimation methods and their assembly into voltage states and
//! branch flows.
//!
//! | method | angles                       | magnitudes                                  |
//! |--------|------------------------------|---------------------------------------------|
//! | M1     | least squares (joint)        | least squares (joint)                       |
//! | M2     | one network over both        | one network over both                       |
//! | M3     | network                      | network                                     |
//! | M4     | network, multi-task loss     | network on high-spread buses, least squares on the rest |

mod assemble;
mod bundle;
mod split;
mod tune;

pub use assemble::{angle_differences, estimate_branch_flows, FlowSamples, StateEstimate};
pub use bundle::{load_bundle, save_bundle, MANIFEST};
pub use split::{column_std, split_buses, BusSplit};
pub use tune::{tune_alpha, tune_gamma, AlphaChoice, GammaChoice};

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::grid::NetworkCase;
use crate::learn::{fit_ols, train_mlp, Batch, LinearModel, LossHistory, MlpModel, Standardizer, TrainConfig};
use crate::scenario::{Dataset, Part, Samples};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodId {
    M1,
    M2,
    M3,
    M4,
}

impl MethodId {
    pub const ALL: [MethodId; 4] = [MethodId::M1, MethodId::M2, MethodId::M3, MethodId::M4];
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "M1" => Ok(MethodId::M1),
            "M2" => Ok(MethodId::M2),
            "M3" => Ok(MethodId::M3),
            "M4" => Ok(MethodId::M4),
            _ => Err(Error::Config(format!("unknown method {s:?}; expected one of M1, M2, M3, M4"))),
        }
    }
}

/// Architecture and optimizer settings of one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Hidden layer widths; input and output widths follow from the data.
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub early_stop_patience: usize,
    /// Per-epoch learning-rate factor.
    pub lr_decay: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden: vec![100, 100],
            learning_rate: 3e-3,
            batch_size: 32,
            epochs: 200,
            early_stop_patience: 20,
            lr_decay: 1.0,
        }
    }
}

impl NetConfig {
    fn train_config(&self, shuffle_seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            shuffle_seed,
            early_stop_patience: self.early_stop_patience,
            lr_decay: self.lr_decay,
            ..Default::default()
        }
    }

    fn dims(&self, d_in: usize, d_out: usize) -> Vec<usize> {
        let mut dims = vec![d_in];
        dims.extend(&self.hidden);
        dims.push(d_out);
        dims
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetPair {
    pub angle: NetConfig,
    pub magnitude: NetConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct M4Config {
    pub angle: NetConfig,
    pub magnitude: NetConfig,
    /// Magnitude-spread threshold of the bus split, per-unit.
    pub gamma: f64,
    /// Weight of the angle-difference loss.
    pub alpha: f64,
}

impl Default for M4Config {
    fn default() -> Self {
        M4Config {
            angle: NetConfig::default(),
            magnitude: NetConfig::default(),
            gamma: 1e-3,
            alpha: 1.0,
        }
    }
}

/// Settings of every trainable method.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodConfig {
    #[serde(rename = "M2")]
    pub m2: NetConfig,
    #[serde(rename = "M3")]
    pub m3: NetPair,
    #[serde(rename = "M4")]
    pub m4: M4Config,
}

/// Role of a network, which fixes its seeds: the same run seed and role
/// always give the same initialization and shuffling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Joint = 1,
    Angle = 2,
    Magnitude = 3,
}

/// `(init_seed, shuffle_seed)` for a network role.
pub fn derive_seeds(run_seed: u64, role: Role) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    rng.set_stream(role as u64);
    (rng.next_u64(), rng.next_u64())
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Linear(LinearModel),
    Mlp(MlpModel),
}

impl Model {
    pub fn predict(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            Model::Linear(m) => m.predict(inputs),
            Model::Mlp(m) => m.forward(inputs),
        }
    }

    pub fn d_out(&self) -> usize {
        match self {
            Model::Linear(m) => m.d_out(),
            Model::Mlp(m) => m.d_out(),
        }
    }
}

/// One trained model and the slots of the stacked output
/// `[angles; magnitudes]` it fills.
#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub name: String,
    pub model: Model,
    pub outputs: Vec<usize>,
    pub seeds: Option<(u64, u64)>,
    pub history: Option<LossHistory>,
}

/// A trained method: its components jointly fill every angle and magnitude
/// slot exactly once.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodBundle {
    pub method: MethodId,
    pub n_inputs: usize,
    pub n_angles: usize,
    pub n_magnitudes: usize,
    pub components: Vec<Component>,
    pub split: Option<BusSplit>,
    pub alpha: Option<f64>,
    pub run_seed: u64,
}

impl MethodBundle {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        method: MethodId,
        n_inputs: usize,
        n_angles: usize,
        n_magnitudes: usize,
        components: Vec<Component>,
        split: Option<BusSplit>,
        alpha: Option<f64>,
        run_seed: u64,
    ) -> Result<Self> {
        let width = n_angles + n_magnitudes;
        let mut hits = vec![0usize; width];
        for c in &components {
            ensure!(
                c.model.d_out() == c.outputs.len(),
                Error::Contract(format!(
                    "component {} predicts {} values for {} slots",
                    c.name,
                    c.model.d_out(),
                    c.outputs.len()
                ))
            );
            for &o in &c.outputs {
                ensure!(o < width, Error::Contract(format!("component {} writes slot {o} of {width}", c.name)));
                hits[o] += 1;
            }
        }
        ensure!(
            hits.iter().all(|&h| h == 1),
            Error::Contract(format!("{method} components do not cover every output exactly once"))
        );
        Ok(MethodBundle {
            method,
            n_inputs,
            n_angles,
            n_magnitudes,
            components,
            split,
            alpha,
            run_seed,
        })
    }

    /// Predicted angles (relative to the slack) and load-bus magnitudes.
    pub fn predict_states(&self, inputs: &DMatrix<f64>) -> Result<StateEstimate> {
        ensure!(
            inputs.ncols() == self.n_inputs,
            Error::Contract(format!(
                "{} was trained on {} inputs, got {}",
                self.method,
                self.n_inputs,
                inputs.ncols()
            ))
        );
        let n = inputs.nrows();
        let mut stacked = DMatrix::zeros(n, self.n_angles + self.n_magnitudes);
        for c in &self.components {
            let pred = c.model.predict(inputs)?;
            for (k, &slot) in c.outputs.iter().enumerate() {
                stacked.set_column(slot, &pred.column(k));
            }
        }
        Ok(StateEstimate {
            angles: stacked.columns(0, self.n_angles).into_owned(),
            magnitudes: stacked.columns(self.n_angles, self.n_magnitudes).into_owned(),
        })
    }
}

fn stacked_targets(s: &Samples) -> DMatrix<f64> {
    let (n, na, nm) = (s.len(), s.angles.ncols(), s.magnitudes.ncols());
    DMatrix::from_fn(n, na + nm, |r, c| if c < na { s.angles[(r, c)] } else { s.magnitudes[(r, c - na)] })
}

/// How a network's outputs are standardized.
#[derive(Clone, Copy)]
enum Scaling {
    PerColumn,
    Shared,
    Pooled,
}

#[allow(clippy::too_many_arguments)]
fn train_net(
    name: &str,
    net: &NetConfig,
    role: Role,
    run_seed: u64,
    scaling: Scaling,
    train: (&DMatrix<f64>, &DMatrix<f64>),
    validation: (&DMatrix<f64>, &DMatrix<f64>),
    loss_setup: impl FnOnce(&mut TrainConfig),
    outputs: Vec<usize>,
) -> Result<Component> {
    let (init_seed, shuffle_seed) = derive_seeds(run_seed, role);
    let output_std = match scaling {
        Scaling::PerColumn => Standardizer::fit(train.1),
        Scaling::Shared => Standardizer::fit_shared_scale(train.1),
        Scaling::Pooled => Standardizer::fit_pooled(train.1),
    };
    let model = MlpModel::init(
        &net.dims(train.0.ncols(), train.1.ncols()),
        Standardizer::fit(train.0),
        output_std,
        init_seed,
    )?;
    let mut cfg = net.train_config(shuffle_seed);
    loss_setup(&mut cfg);
    let (model, history) = train_mlp(
        model,
        Batch {
            inputs: train.0,
            targets: train.1,
        },
        Batch {
            inputs: validation.0,
            targets: validation.1,
        },
        &cfg,
    )?;
    Ok(Component {
        name: name.into(),
        model: Model::Mlp(model),
        outputs,
        seeds: Some((init_seed, shuffle_seed)),
        history: Some(history),
    })
}

fn angle_net(
    net: &NetConfig,
    run_seed: u64,
    train: &Samples,
    validation: &Samples,
    multitask: Option<(DMatrix<f64>, f64)>,
) -> Result<Component> {
    let na = train.angles.ncols();
    train_net(
        "angle",
        net,
        Role::Angle,
        run_seed,
        Scaling::Shared,
        (&train.inputs, &train.angles),
        (&validation.inputs, &validation.angles),
        |cfg| {
            if let Some((a, alpha)) = multitask {
                cfg.incidence = Some(a);
                cfg.alpha = alpha;
            }
        },
        (0..na).collect(),
    )
}

fn magnitude_net(
    net: &NetConfig,
    run_seed: u64,
    train: &Samples,
    validation: &Samples,
    buses: &[usize],
) -> Result<Component> {
    let na = train.angles.ncols();
    train_net(
        "magnitude",
        net,
        Role::Magnitude,
        run_seed,
        Scaling::PerColumn,
        (&train.inputs, &train.magnitudes.select_columns(buses)),
        (&validation.inputs, &validation.magnitudes.select_columns(buses)),
        |_| {},
        buses.iter().map(|b| na + b).collect(),
    )
}

fn magnitude_linear(train: &Samples, buses: &[usize]) -> Result<Component> {
    let na = train.angles.ncols();
    Ok(Component {
        name: "magnitude_linear".into(),
        model: Model::Linear(fit_ols(&train.inputs, &train.magnitudes.select_columns(buses))?),
        outputs: buses.iter().map(|b| na + b).collect(),
        seeds: None,
        history: None,
    })
}

/// Magnitude components of M4 for a given split.
fn split_magnitude_components(
    net: &NetConfig,
    run_seed: u64,
    train: &Samples,
    validation: &Samples,
    split: &BusSplit,
) -> Result<Vec<Component>> {
    let mut out = Vec::with_capacity(2);
    if !split.big_std.is_empty() {
        out.push(magnitude_net(net, run_seed, train, validation, &split.big_std)?);
    }
    if !split.small_std.is_empty() {
        out.push(magnitude_linear(train, &split.small_std)?);
    }
    Ok(out)
}

/// Train one method on the training part of `ds`, using the validation
/// part for early stopping.
///
/// Networks that play the same role (the angle networks of M3 and M4, for
/// instance) get the same seeds from `run_seed`, so configuring them alike
/// gives identical models. Independent networks of one method train in
/// parallel.
pub fn train_method(
    method: MethodId,
    case: &NetworkCase,
    ds: &Dataset,
    cfg: &MethodConfig,
    run_seed: u64,
) -> Result<MethodBundle> {
    let train = ds.part(Part::Train);
    let validation = ds.part(Part::Validation);
    let (n_inputs, na, nm) = (train.inputs.ncols(), train.angles.ncols(), train.magnitudes.ncols());
    ensure!(
        na == case.layout().n_angles() && nm == case.layout().n_loads(),
        Error::Contract("dataset does not belong to this case".into())
    );
    ensure!(train.len() >= 2, Error::Dataset("the training part needs at least two rows".into()));

    let (components, split, alpha) = match method {
        MethodId::M1 => {
            let model = fit_ols(&train.inputs, &stacked_targets(&train))?;
            let c = Component {
                name: "joint".into(),
                model: Model::Linear(model),
                outputs: (0..na + nm).collect(),
                seeds: None,
                history: None,
            };
            (vec![c], None, None)
        }
        MethodId::M2 => {
            let c = train_net(
                "joint",
                &cfg.m2,
                Role::Joint,
                run_seed,
                Scaling::Pooled,
                (&train.inputs, &stacked_targets(&train)),
                (&validation.inputs, &stacked_targets(&validation)),
                |_| {},
                (0..na + nm).collect(),
            )?;
            (vec![c], None, None)
        }
        MethodId::M3 => {
            let all: Vec<usize> = (0..nm).collect();
            let (a, m) = rayon::join(
                || angle_net(&cfg.m3.angle, run_seed, &train, &validation, None),
                || magnitude_net(&cfg.m3.magnitude, run_seed, &train, &validation, &all),
            );
            (vec![a?, m?], None, None)
        }
        MethodId::M4 => {
            let split = split_buses(&train.magnitudes, cfg.m4.gamma)?;
            let incidence = case.reduced_incidence();
            let (a, mags) = rayon::join(
                || angle_net(&cfg.m4.angle, run_seed, &train, &validation, Some((incidence, cfg.m4.alpha))),
                || split_magnitude_components(&cfg.m4.magnitude, run_seed, &train, &validation, &split),
            );
            let mut components = vec![a?];
            components.extend(mags?);
            (components, Some(split), Some(cfg.m4.alpha))
        }
    };
    MethodBundle::new(method, n_inputs, na, nm, components, split, alpha, run_seed)
}
