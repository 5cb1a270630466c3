use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, LossSpec, MlpModel};
use crate::error::{ensure, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    /// Weight of the angle-difference term; only used with an incidence
    /// matrix.
    pub alpha: f64,
    /// Reduced incidence matrix for the multi-task loss. Plain MSE when
    /// absent.
    #[serde(skip)]
    pub incidence: Option<DMatrix<f64>>,
    pub shuffle_seed: u64,
    pub early_stop_patience: usize,
    /// Factor applied to the learning rate after every epoch; 1 keeps it
    /// constant.
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 200,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            alpha: 0.0,
            incidence: None,
            shuffle_seed: 0,
            early_stop_patience: 20,
            lr_decay: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate))
        );
        ensure!(self.batch_size >= 1, Error::Config("batch_size must be at least 1".into()));
        let (b1, b2) = self.adam_betas;
        ensure!(
            (0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2) && self.adam_eps > 0.0,
            Error::Config(format!("invalid Adam constants betas = {:?}, eps = {}", self.adam_betas, self.adam_eps))
        );
        ensure!(
            self.alpha >= 0.0 && self.alpha.is_finite(),
            Error::Config(format!("alpha must be non-negative, got {}", self.alpha))
        );
        ensure!(
            self.lr_decay > 0.0 && self.lr_decay <= 1.0,
            Error::Config(format!("lr_decay must be in (0, 1], got {}", self.lr_decay))
        );
        Ok(())
    }

    pub fn loss(&self) -> LossSpec {
        match &self.incidence {
            Some(a) => LossSpec::MultiTask {
                incidence: a.clone(),
                alpha: self.alpha,
            },
            None => LossSpec::Mse,
        }
    }
}

/// Per-epoch losses in standardized units.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossHistory {
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
    /// Epoch (1-based) whose weights were kept.
    pub best_epoch: usize,
}

impl LossHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,validation_loss\n");
        for (k, (t, v)) in self.train.iter().zip(&self.validation).enumerate() {
            out.push_str(&format!("{},{t:.16e},{v:.16e}\n", k + 1));
        }
        out
    }
}

/// Input and target rows in physical units.
#[derive(Clone, Copy)]
pub struct Batch<'a> {
    pub inputs: &'a DMatrix<f64>,
    pub targets: &'a DMatrix<f64>,
}

/// Mini-batch Adam on the model's standardized outputs.
///
/// The rows are reshuffled every epoch from `cfg.shuffle_seed`. After each
/// epoch the loss on the validation rows is computed, and the weights with
/// the lowest validation loss are returned once `epochs` run out or
/// `early_stop_patience` epochs pass without improvement. Without
/// validation rows the training loss is used instead.
pub fn train_mlp(
    mut model: MlpModel,
    train: Batch,
    validation: Batch,
    cfg: &TrainConfig,
) -> Result<(MlpModel, LossHistory)> {
    cfg.validate()?;
    for (name, b) in [("training", train), ("validation", validation)] {
        ensure!(
            b.inputs.nrows() == b.targets.nrows()
                && b.inputs.ncols() == model.d_in()
                && b.targets.ncols() == model.d_out(),
            Error::Contract(format!(
                "{name} data is {:?} -> {:?} for a {:?} network",
                b.inputs.shape(),
                b.targets.shape(),
                model.layer_dims()
            ))
        );
    }
    ensure!(train.inputs.nrows() > 0, Error::Contract("no training rows".into()));
    let loss = cfg.loss();

    let xs = model.input_std.apply(train.inputs)?;
    let ys = model.output_std.apply(train.targets)?;
    let xv = model.input_std.apply(validation.inputs)?;
    let yv = model.output_std.apply(validation.targets)?;
    let has_validation = validation.inputs.nrows() > 0;

    let n = xs.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut adam = Adam::new(cfg.learning_rate, cfg.adam_betas, cfg.adam_eps);

    let mut history = LossHistory::default();
    let mut best = (f64::INFINITY, model.layers.clone());
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch, rows) in order.chunks(cfg.batch_size).enumerate() {
            let xb = xs.select_rows(rows);
            let yb = ys.select_rows(rows);
            let (pred, cache) = model.forward_cached(&xb);
            let eval = loss.eval(&pred, &yb)?;
            if !eval.value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch + 1,
                    loss: eval.value,
                });
            }
            total += eval.value * rows.len() as f64;
            let grads = model.backward(&cache, &eval.grad);
            adam.step(&mut model.param_blocks_mut(), &grads.blocks());
        }
        adam.learning_rate *= cfg.lr_decay;
        let train_loss = total / n as f64;
        let val_loss = if has_validation {
            loss.eval(&model.forward_standardized(&xv), &yv)?.value
        } else {
            train_loss
        };
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: 0,
                loss: val_loss,
            });
        }
        history.train.push(train_loss);
        history.validation.push(val_loss);

        if val_loss < best.0 {
            best = (val_loss, model.layers.clone());
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }
    if history.best_epoch > 0 {
        model.layers = best.1;
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::{fit_ols, Standardizer};
    use rand::{Rng, SeedableRng};

    fn linear_data(n: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let h = DMatrix::from_row_slice(2, 3, &[0.5, -1.0, 2.0, 1.5, 0.0, -0.7]);
        let mut y = &x * h.transpose();
        y.apply(|v| *v += 0.3);
        (x, y)
    }

    fn model_for(x: &DMatrix<f64>, y: &DMatrix<f64>, hidden: usize, seed: u64) -> MlpModel {
        MlpModel::init(
            &[x.ncols(), hidden, y.ncols()],
            Standardizer::fit(x),
            Standardizer::fit(y),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn learns_linear_data_down_to_ols_level() {
        let (x, y) = linear_data(400, 1);
        let (xv, yv) = linear_data(100, 2);
        let cfg = TrainConfig {
            learning_rate: 3e-3,
            epochs: 300,
            early_stop_patience: 300,
            ..Default::default()
        };
        let model = model_for(&x, &y, 32, 7);
        let (model, hist) = train_mlp(
            model,
            Batch { inputs: &x, targets: &y },
            Batch { inputs: &xv, targets: &yv },
            &cfg,
        )
        .unwrap();
        let ols = fit_ols(&x, &y).unwrap().predict(&x).unwrap();
        let ols_mse = (&ols - &y).norm_squared() / y.len() as f64;
        let net_mse = (model.forward(&x).unwrap() - &y).norm_squared() / y.len() as f64;
        // exact linear data leaves OLS with round-off residuals only
        assert!(ols_mse < 1e-20);
        assert!(net_mse < 1e-3, "network MSE {net_mse}");
        assert!(hist.train.last().unwrap() < &hist.train[0]);
    }

    #[test]
    fn identical_seeds_give_identical_histories() {
        let (x, y) = linear_data(100, 3);
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            epochs: 5,
            shuffle_seed: 9,
            ..Default::default()
        };
        let run = || {
            train_mlp(
                model_for(&x, &y, 8, 4),
                Batch { inputs: &x, targets: &y },
                Batch { inputs: &x, targets: &y },
                &cfg,
            )
            .unwrap()
        };
        let (ma, ha) = run();
        let (mb, hb) = run();
        assert_eq!(ha, hb);
        assert_eq!(ma, mb);
    }

    #[test]
    fn divergence_is_reported() {
        let (x, mut y) = linear_data(50, 3);
        let model = model_for(&x, &y, 4, 0);
        y[(3, 1)] = f64::NAN;
        let cfg = TrainConfig {
            epochs: 2,
            ..Default::default()
        };
        let err = train_mlp(model, Batch { inputs: &x, targets: &y }, Batch { inputs: &x, targets: &y }, &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence { epoch: 1, .. }), "{err}");
    }

    #[test]
    fn early_stopping_keeps_best_weights() {
        let (x, y) = linear_data(64, 5);
        let (xv, yv) = linear_data(64, 6);
        let cfg = TrainConfig {
            learning_rate: 5e-2,
            epochs: 60,
            early_stop_patience: 3,
            ..Default::default()
        };
        let (model, hist) = train_mlp(
            model_for(&x, &y, 16, 1),
            Batch { inputs: &x, targets: &y },
            Batch { inputs: &xv, targets: &yv },
            &cfg,
        )
        .unwrap();
        let best = hist.validation[hist.best_epoch - 1];
        assert!(hist.validation.iter().all(|&v| v >= best));
        let zs = model.input_std.apply(&xv).unwrap();
        let ys = model.output_std.apply(&yv).unwrap();
        let val = crate::learn::mse(&model.forward_standardized(&zs), &ys).unwrap().value;
        assert_eq!(val, best);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = TrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn decay_freezes_training_after_the_first_epoch() {
        let (x, y) = linear_data(64, 5);
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            epochs: 8,
            lr_decay: 1e-12,
            early_stop_patience: 100,
            ..Default::default()
        };
        let data = Batch { inputs: &x, targets: &y };
        let (_, hist) = train_mlp(model_for(&x, &y, 6, 1), data, data, &cfg).unwrap();
        let settled = hist.validation[0];
        assert!(hist.validation.iter().all(|v| ((v - settled) / settled).abs() < 1e-9));
        for bad in [0.0, 1.5] {
            let cfg = TrainConfig { lr_decay: bad, ..Default::default() };
            assert!(cfg.validate().is_err());
        }
    }
}
