//! Uncertainty-aware visuomotor control.
//!
//! An imitation-learned manipulation policy with concrete-dropout layers is
//! sampled by Monte-Carlo forward passes at every tick. The spread of the
//! sampled end-effector commands is monitored online; when a smoothed
//! uncertainty sum crosses a validated threshold, a recovery controller
//! backtracks and follows the candidate action with the lowest predicted
//! next-tick uncertainty.
//!
//! Module map:
//!
//! - [`nn`]: tensors, dense/conv/LSTM layers, concrete dropout, losses,
//!   optimizer, gradient checking and checkpoints.
//! - [`env`]: deterministic tabletop simulator, scripted experts and
//!   demonstration datasets.
//! - [`policy`]: the Bayesian policy network, training and rollouts.
//! - [`uncertainty`]: MC sampling, calibrated trace-of-covariance uncertainty,
//!   sliding windows and threshold selection.
//! - [`foresight`]: the distilled next-tick uncertainty predictor.
//! - [`recovery`]: the monitoring / backtracking / recovery controller.
//! - [`harness`]: configuration, pipeline stages, reports.

pub mod env;
pub mod error;
pub mod foresight;
pub mod harness;
pub mod nn;
pub mod policy;
pub mod recovery;
pub mod rng;
pub mod uncertainty;

pub use error::{Error, Result};
