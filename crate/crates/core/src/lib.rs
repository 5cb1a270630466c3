//! Data-driven probabilistic power flow.
//!
//! The crate generates Monte Carlo ground truth with a Newton-Raphson AC
//! power-flow solver, trains estimators of the inverse power-flow mapping
//! from injections to voltage phasors, and scores the resulting voltage and
//! branch-flow distributions.
//!
//! * [`grid`]: MATPOWER case parsing and the bus admittance matrix.
//! * [`pf`]: Newton-Raphson solver and branch flows.
//! * [`scenario`]: random injections and labelled datasets.
//! * [`learn`]: least squares, feed-forward networks, Adam and the
//!   multi-task angle loss.
//! * [`pipeline`]: the four estimation methods and their assembly into
//!   full voltage states.
//! * [`metrics`]: RMSE, Wasserstein and moment errors, and report tables.

pub mod error;
pub mod grid;
pub mod learn;
pub mod metrics;
pub mod pf;
pub mod pipeline;
pub mod scenario;

pub use error::{Error, Result};

// The guide's chapters and the README run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/power-flow.md")]
    mod power_flow {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
    #[doc = include_str!("../../../book/src/learners.md")]
    mod learners {}
    #[doc = include_str!("../../../book/src/methods.md")]
    mod methods {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
