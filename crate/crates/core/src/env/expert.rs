//! Scripted waypoint experts.
//!
//! The experts are reactive: the active waypoint is a function of the
//! current state alone, so the same controller can take over from any
//! state. Each tick emits a clipped step towards the active waypoint.

use super::geometry::*;
use super::{clip_delta, ActionCommand, EnvState, GripperCommand, Task, Vec3};

const PUSH_Z: f64 = 0.01;
const PUSH_HOVER_Z: f64 = 0.045;
const CARRY_Z: f64 = 0.08;
const HOVER_Z: f64 = 0.07;
/// Pusher centre distance from the cube centre while in face contact.
const CONTACT: f64 = CUBE_HALF + PUSHER_RADIUS;
const STANDOFF: f64 = 0.045;
const ALIGN_TOL: f64 = 0.004;
const WAYPOINT_TOL: f64 = 0.01;
const ON_TOL: f64 = 0.004;

fn toward(ee: Vec3, goal: Vec3, gripper: GripperCommand) -> ActionCommand {
    ActionCommand::new(clip_delta(goal - ee), gripper)
}

fn planar(a: Vec3, b: Vec3) -> f64 {
    a.dist_xy(b)
}

/// Next expert command for `state`.
pub fn expert_action(state: &EnvState) -> ActionCommand {
    match state.task {
        Task::Pushing => push_action(state),
        Task::PickPlace | Task::PickReach => pick_action(state),
    }
}

fn push_action(s: &EnvState) -> ActionCommand {
    let ee = s.ee_pos;
    let c = s.object_pos;
    let t = s.target_pos;
    let dy = t.y - c.y;
    let dx = t.x - c.x;

    // (standoff point, push goal, whether the pusher is lined up behind the
    // face that must be pushed)
    let (standoff, goal, lined_up) = if dy.abs() > ALIGN_TOL {
        let sgn = dy.signum();
        let behind = sgn * (c.y - ee.y);
        (
            Vec3::new(c.x, c.y - sgn * STANDOFF, PUSH_Z),
            Vec3::new(c.x, t.y - sgn * CONTACT, PUSH_Z),
            (ee.x - c.x).abs() <= ON_TOL && (CONTACT - 0.002..=STANDOFF + 0.006).contains(&behind),
        )
    } else if dx.abs() > ALIGN_TOL {
        let sgn = dx.signum();
        let behind = sgn * (c.x - ee.x);
        (
            Vec3::new(c.x - sgn * STANDOFF, c.y, PUSH_Z),
            Vec3::new(t.x - sgn * CONTACT, c.y, PUSH_Z),
            (ee.y - c.y).abs() <= ON_TOL && (CONTACT - 0.002..=STANDOFF + 0.006).contains(&behind),
        )
    } else {
        return ActionCommand::IDLE;
    };

    if lined_up && ee.z <= PUSH_Z + 0.005 {
        return toward(ee, goal, GripperCommand::NoOp);
    }
    if planar(ee, standoff) <= ON_TOL {
        return toward(ee, standoff, GripperCommand::NoOp);
    }
    if ee.z < PUSH_HOVER_Z - 1e-9 {
        return toward(ee, Vec3::new(ee.x, ee.y, PUSH_HOVER_Z), GripperCommand::NoOp);
    }
    toward(ee, Vec3::new(standoff.x, standoff.y, PUSH_HOVER_Z), GripperCommand::NoOp)
}

fn pick_action(s: &EnvState) -> ActionCommand {
    let ee = s.ee_pos;
    if s.attached {
        let carry = match s.task {
            Task::PickReach => {
                if s.stick_far_end().dist(s.target_pos) <= SUCCESS_RADIUS - 0.01 {
                    return ActionCommand::IDLE;
                }
                let g = s.target_pos - s.stick_grasp_offset;
                Vec3::new(g.x, g.y, s.target_pos.z + 0.015)
            }
            _ => Vec3::new(s.target_pos.x, s.target_pos.y, CARRY_Z),
        };
        if planar(ee, carry) > WAYPOINT_TOL && ee.z < HOVER_Z {
            return toward(ee, Vec3::new(ee.x, ee.y, CARRY_Z), GripperCommand::NoOp);
        }
        if ee.dist(carry) <= WAYPOINT_TOL && s.task == Task::PickPlace {
            return ActionCommand::new(clip_delta(carry - ee), GripperCommand::Open);
        }
        return toward(ee, carry, GripperCommand::NoOp);
    }

    let obj = s.object_pos;
    if s.task == Task::PickPlace
        && planar(obj, s.target_pos) <= ALIGN_TOL
        && obj.z <= REST_Z + 1e-9
    {
        return ActionCommand::IDLE;
    }
    if planar(ee, obj) <= ON_TOL {
        if ee.dist(obj) <= ON_TOL && ee.z <= GRASP_HEIGHT {
            return ActionCommand::new(Vec3::ZERO, GripperCommand::Close);
        }
        return toward(ee, obj, GripperCommand::NoOp);
    }
    if ee.z < HOVER_Z - 1e-9 {
        return toward(ee, Vec3::new(ee.x, ee.y, HOVER_Z), GripperCommand::NoOp);
    }
    toward(ee, Vec3::new(obj.x, obj.y, HOVER_Z), GripperCommand::NoOp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{reset, step, StageTracker};

    fn run(task: Task, seed: u64, horizon: u32) -> (Vec<EnvState>, bool) {
        let mut s = reset(task, seed);
        let mut tracker = StageTracker::new(&s);
        let mut trace = vec![s.clone()];
        for _ in 0..horizon {
            if tracker.complete() {
                break;
            }
            s = step(&s, &expert_action(&s));
            tracker.observe(&s);
            trace.push(s.clone());
        }
        (trace, tracker.complete())
    }

    #[test]
    fn experts_succeed_from_every_cell() {
        for task in Task::ALL {
            let n = 300;
            let ok = (0..n).filter(|&seed| run(task, seed, 60).1).count();
            assert!(ok as f64 >= 0.99 * n as f64, "{task}: {ok}/{n}");
        }
    }

    #[test]
    fn converged_expert_idles() {
        let (trace, ok) = run(Task::PickPlace, 11, 60);
        assert!(ok);
        let last = trace.last().unwrap();
        let a = expert_action(last);
        assert!(a.delta_ee.norm() < 1e-9);
        assert_eq!(a.gripper, GripperCommand::NoOp);
    }

    #[test]
    fn push_path_is_two_orthogonal_strokes() {
        // Length-weighted histogram of planar motion direction in 10 degree
        // bins, restricted to ticks in contact height.
        let mut checked = 0;
        for seed in 0..200 {
            let s0 = reset(Task::Pushing, seed);
            let d = s0.target_pos - s0.object_pos;
            if d.x.abs() < 0.06 || d.y.abs() < 0.06 {
                continue;
            }
            let (trace, ok) = run(Task::Pushing, seed, 60);
            assert!(ok);
            let mut hist = [0.0f64; 36];
            for w in trace.windows(2) {
                if w[0].ee_pos.z > PUSH_HEIGHT || w[1].ee_pos.z > PUSH_HEIGHT {
                    continue;
                }
                let m = w[1].ee_pos - w[0].ee_pos;
                let len = m.x.hypot(m.y);
                if len < 1e-9 {
                    continue;
                }
                let ang = m.y.atan2(m.x).to_degrees().rem_euclid(360.0);
                hist[(ang / 10.0) as usize % 36] += len;
            }
            let total: f64 = hist.iter().sum();
            let mut order: Vec<usize> = (0..36).collect();
            order.sort_by(|&a, &b| hist[b].total_cmp(&hist[a]));
            let (a, b) = (order[0], order[1]);
            let sep = ((a as f64 - b as f64) * 10.0).abs() % 360.0;
            let sep = sep.min(360.0 - sep);
            assert!((sep - 90.0).abs() <= 10.0, "seed {seed}: modes {a} {b}");
            assert!(
                (hist[a] + hist[b]) / total > 0.9,
                "seed {seed}: dominant share {}",
                (hist[a] + hist[b]) / total
            );
            checked += 1;
        }
        assert!(checked > 20);
    }
}
