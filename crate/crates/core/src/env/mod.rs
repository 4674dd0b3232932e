//! Deterministic tabletop manipulation simulator.
//!
//! A free-flying gripper point moves over a unit-square table. Three tasks
//! are supported: quasi-static pushing of a cube, pick-and-place of a cube,
//! and pick-and-reach with a stick. Everything here is a pure function of
//! its inputs; scene randomness comes only from the scene seed.

mod dataset;
mod expert;
mod metrics;
mod render;
mod sim;
mod types;

pub use dataset::{
    expert_episode, generate_demos, read_dataset, write_dataset, DatasetHeader, DemoDataset, SpawnSpec,
    DATASET_FORMAT_VERSION,
};
pub use expert::expert_action;
pub use metrics::{success_metrics, StageFlags, StageTracker};
pub use render::{observe, GRID_CELLS, GRID_CHANNELS, GRID_LEN};
pub use sim::{clip_delta, reset, spawn_cells, step, step_applied};
pub use types::*;

/// Geometry and control constants, in table units (the table is the unit
/// square; heights are in the same units).
pub mod geometry {
    use super::Vec3;

    pub const MAX_STEP: f64 = 0.02;
    pub const WORKSPACE_MIN: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const WORKSPACE_MAX: Vec3 = Vec3::new(1.0, 1.0, 0.3);
    pub const HOME: Vec3 = Vec3::new(0.5, 0.5, 0.12);
    pub const GRIPPER_SLEW: f64 = 0.25;

    pub const CUBE_HALF: f64 = 0.015;
    pub const REST_Z: f64 = CUBE_HALF;
    pub const GRASP_RADIUS: f64 = 0.025;
    pub const GRASP_HEIGHT: f64 = 0.03;

    pub const PUSHER_RADIUS: f64 = 0.02;
    pub const PUSH_HEIGHT: f64 = 0.03;
    /// Contacts further than this from the face centre rotate the cube.
    pub const OFF_CENTER_TOL: f64 = 0.01;
    /// Yaw change per unit of contact torque (offset x penetration).
    pub const YAW_GAIN: f64 = 150.0;

    pub const STICK_LENGTH: f64 = 0.12;
    pub const REACH_TARGET_Z: f64 = 0.06;

    pub const REACH_RADIUS: f64 = 0.04;
    pub const PICK_HEIGHT: f64 = 0.06;
    pub const SUCCESS_RADIUS: f64 = 0.03;

    pub const GRID_COLS: usize = 6;
    pub const GRID_ROWS: usize = 8;
}
