use rand::Rng as _;

use super::geometry::*;
use super::{ActionCommand, EnvState, GripperCommand, Task, Vec3};
use crate::rng::{rng_for, stream};

/// Scales `delta` down so its Euclidean norm is at most `MAX_STEP`.
/// Non-finite components are treated as zero.
pub fn clip_delta(delta: Vec3) -> Vec3 {
    let clean = |v: f64| if v.is_finite() { v } else { 0.0 };
    let d = Vec3::new(clean(delta.x), clean(delta.y), clean(delta.z));
    let n = d.norm();
    if n > MAX_STEP {
        d * (MAX_STEP / n)
    } else {
        d
    }
}

fn cube_cell_center(col: usize, row: usize) -> Vec3 {
    Vec3::new(
        0.5 + (col as f64 - 2.5) * 0.04,
        0.5 + (row as f64 - 3.5) * 0.04,
        REST_Z,
    )
}

fn stick_cell_center(col: usize, row: usize) -> Vec3 {
    Vec3::new(
        0.30 + (col as f64 - 2.5) * 0.03,
        0.5 + (row as f64 - 3.5) * 0.03,
        REST_Z,
    )
}

fn reach_target_cell_center(col: usize, row: usize) -> Vec3 {
    Vec3::new(
        0.62 + (col as f64 - 2.5) * 0.03,
        0.5 + (row as f64 - 3.5) * 0.03,
        REACH_TARGET_Z,
    )
}

const N_CELLS: usize = GRID_COLS * GRID_ROWS;

fn cell_coords(idx: usize) -> (usize, usize) {
    (idx % GRID_COLS, idx / GRID_COLS)
}

/// Flat cell indices (`row * 6 + col`) of the object and target spawns.
///
/// Cube tasks draw both from one grid without replacement. Pick-and-reach
/// draws from two disjoint grids, so the pair is independent.
pub fn spawn_cells(task: Task, scene_seed: u64) -> (usize, usize) {
    let mut rng = rng_for(scene_seed, &[stream::SCENE, task.id()]);
    let obj = rng.gen_range(0..N_CELLS);
    let target = match task {
        Task::PickReach => rng.gen_range(0..N_CELLS),
        _ => {
            let t = rng.gen_range(0..N_CELLS - 1);
            if t >= obj {
                t + 1
            } else {
                t
            }
        }
    };
    (obj, target)
}

pub fn reset(task: Task, scene_seed: u64) -> EnvState {
    let (obj, target) = spawn_cells(task, scene_seed);
    let (oc, or) = cell_coords(obj);
    let (tc, tr) = cell_coords(target);
    let (object_pos, target_pos, stick_grasp_offset) = match task {
        Task::PickReach => (
            stick_cell_center(oc, or),
            reach_target_cell_center(tc, tr),
            Vec3::new(STICK_LENGTH, 0.0, 0.0),
        ),
        _ => (cube_cell_center(oc, or), cube_cell_center(tc, tr), Vec3::ZERO),
    };
    EnvState {
        task,
        tick: 0,
        ee_pos: HOME,
        gripper_open: 1.0,
        object_pos,
        object_yaw: 0.0,
        target_pos,
        attached: false,
        stick_grasp_offset,
    }
}

pub fn step(state: &EnvState, action: &ActionCommand) -> EnvState {
    step_applied(state, action).0
}

/// Like [`step`], also returning the end-effector displacement actually
/// applied after clipping and workspace clamping.
pub fn step_applied(state: &EnvState, action: &ActionCommand) -> (EnvState, Vec3) {
    let mut next = state.clone();
    let delta = clip_delta(action.delta_ee);
    let ee_old = state.ee_pos;
    let ee_new = (ee_old + delta).clamp(WORKSPACE_MIN, WORKSPACE_MAX);
    next.ee_pos = ee_new;
    let applied = ee_new - ee_old;

    if next.attached {
        next.object_pos = ee_new;
    } else if state.task == Task::Pushing {
        resolve_push(&mut next);
    }

    let goal = match action.gripper {
        GripperCommand::Open => Some(1.0),
        GripperCommand::Close => Some(0.0),
        GripperCommand::NoOp => None,
    };
    if let Some(goal) = goal {
        let diff = goal - next.gripper_open;
        next.gripper_open += diff.clamp(-GRIPPER_SLEW, GRIPPER_SLEW);
    }

    if state.task.has_grasp() {
        match action.gripper {
            GripperCommand::Close if !next.attached => {
                if ee_new.z <= GRASP_HEIGHT && ee_new.dist(next.object_pos) <= GRASP_RADIUS {
                    next.attached = true;
                    next.object_pos = ee_new;
                }
            }
            GripperCommand::Open if next.attached => {
                next.attached = false;
                next.object_pos.z = REST_Z;
            }
            _ => {}
        }
    }

    next.tick = state.tick.saturating_add(1);
    (next, applied)
}

fn rotate(x: f64, y: f64, yaw: f64) -> (f64, f64) {
    let (s, c) = yaw.sin_cos();
    (c * x - s * y, s * x + c * y)
}

/// Quasi-static contact between the pusher disc and the cube footprint.
///
/// The cube is displaced by exactly the penetration depth along the contact
/// normal, so a resolved pusher sits tangent to the cube afterwards.
fn resolve_push(state: &mut EnvState) {
    if state.ee_pos.z > PUSH_HEIGHT {
        return;
    }
    let c = state.object_pos;
    let yaw = state.object_yaw;
    let (px, py) = rotate(state.ee_pos.x - c.x, state.ee_pos.y - c.y, -yaw);
    let h = CUBE_HALF;
    let r = PUSHER_RADIUS;
    let qx = px.clamp(-h, h);
    let qy = py.clamp(-h, h);
    let (dx, dy) = (px - qx, py - qy);
    let dist = dx.hypot(dy);

    // local normal pointing from cube towards pusher, penetration depth and
    // the contact point on the cube boundary
    let (nx, ny, pen, cx, cy) = if dist > 0.0 {
        if dist >= r {
            return;
        }
        (dx / dist, dy / dist, r - dist, qx, qy)
    } else {
        // pusher centre inside the footprint: leave through the nearest face
        let ex = h - px.abs();
        let ey = h - py.abs();
        if ex <= ey {
            let s = if px >= 0.0 { 1.0 } else { -1.0 };
            (s, 0.0, r + ex, s * h, py)
        } else {
            let s = if py >= 0.0 { 1.0 } else { -1.0 };
            (0.0, s, r + ey, px, s * h)
        }
    };

    // tangential offset of the contact from the face centre
    let lateral = if nx.abs() >= ny.abs() { cy } else { cx };

    let (mx, my) = rotate(-nx * pen, -ny * pen, yaw);
    state.object_pos.x = (c.x + mx).clamp(CUBE_HALF, 1.0 - CUBE_HALF);
    state.object_pos.y = (c.y + my).clamp(CUBE_HALF, 1.0 - CUBE_HALF);

    if lateral.abs() > OFF_CENTER_TOL {
        let (qwx, qwy) = rotate(cx, cy, yaw);
        let torque = qwx * my - qwy * mx;
        state.object_yaw = wrap_angle(yaw + YAW_GAIN * torque);
    }
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let w = a.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w - two_pi
    } else {
        w
    }
}
