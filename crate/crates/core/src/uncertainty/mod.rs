//! Monte-Carlo dropout sampling and the uncertainty signal built on it.

mod convergence;
mod sampling;
mod threshold;
mod window;

pub use convergence::{mc_convergence_curve, ConvergenceRow};
pub use sampling::{
    mc_sample, mean_action, mean_delta, trace_covariance, transform_action, uncertainty_from_samples,
    ActionSampleSet, NORM_EPS,
};
pub use threshold::{
    pick_threshold, read_threshold_csv, read_validation_csv, write_threshold_csv, write_validation_csv,
    ScanRow, ThresholdResult, ValidationRecord,
};
pub use window::{max_window_sum, UncertaintyTrace, DEFAULT_WINDOW};
