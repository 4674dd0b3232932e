//! Online failure detection and recovery.
//!
//! Each tick the policy is sampled, the calibrated uncertainty is pushed
//! into a sliding window, and a gate decides whether to keep executing the
//! mean action or to recover. The gate opens when the window sum exceeds
//! the validated threshold and enough time has passed since the previous
//! recovery; the minimum interval doubles after every activation so an
//! episode cannot get stuck recovering.

mod controller;
mod episode;

pub use controller::{
    backtrack, should_recover, BacktrackEntry, ControllerConfig, ControllerState, RecoveryMode, FIFO_CAPACITY,
};
pub use episode::{
    min_unc_step, read_recovery_log, recover_init, recover_min_unc, recover_rand, run_episode, sample_init_target,
    write_recovery_log, RecoveryLogRow, INIT_RADIUS,
};
