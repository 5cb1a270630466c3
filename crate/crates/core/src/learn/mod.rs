//! Estimator families: least squares and feed-forward networks.

mod adam;
mod gradcheck;
mod loss;
mod mlp;
mod ols;
mod standardize;
mod train;

pub use adam::Adam;
pub use gradcheck::{grad_check, GradCheckReport, MAX_CHECK_PARAMS};
pub use loss::{mse, multitask_loss, LossEval, LossSpec};
pub use mlp::{Dense, ForwardCache, Gradients, MlpModel};
pub use ols::{fit_ols, LinearModel};
pub use standardize::{Standardizer, STD_FLOOR};
pub use train::{train_mlp, Batch, LossHistory, TrainConfig};
