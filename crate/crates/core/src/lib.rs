//! Estimation of linear panel regressions with interactive fixed effects by
//! convex methods: nuclear-norm penalized least squares, nuclear-norm
//! minimization, a finite post-estimation iteration that upgrades either to
//! least-squares quality, data-driven tuning rules, identification
//! diagnostics, single-index extensions and a Monte Carlo harness.

pub mod bias;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod io;
pub mod kernel;
pub mod objective;
pub mod panel;
pub mod sim;
pub mod single_index;
pub mod tuning;

pub use error::{Error, Result};
pub use estimators::{EstimationResult, SolverConfig};
pub use panel::PanelData;
