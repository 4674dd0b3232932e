use serde::{Deserialize, Serialize};

use super::geometry::*;
use super::{EnvState, EpisodeRecord, Task};

/// Stage successes of one episode. Later stages imply earlier ones: `pick`
/// requires `reach` and `task` requires `pick` (for pushing, `reach`).
/// `pick` is always false for pushing, which has no grasp stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFlags {
    pub reach: bool,
    pub pick: bool,
    pub task: bool,
}

impl StageFlags {
    /// Flags in the column order of [`Task::stage_names`].
    pub fn columns(&self, task: Task) -> Vec<bool> {
        match task {
            Task::Pushing => vec![self.reach, self.task],
            _ => vec![self.reach, self.pick, self.task],
        }
    }

    pub fn is_monotone(&self, task: Task) -> bool {
        let pick_ok = !self.pick || self.reach;
        let task_ok = match task {
            Task::Pushing => !self.task || self.reach,
            _ => !self.task || self.pick,
        };
        pick_ok && task_ok
    }
}

/// Online stage evaluation, fed one state per tick.
#[derive(Clone, Debug)]
pub struct StageTracker {
    task: Task,
    reach: bool,
    pick: bool,
    reach_task: bool,
    current_final: bool,
}

fn reached(s: &EnvState) -> bool {
    s.ee_pos.dist(s.object_pos) <= REACH_RADIUS
}

fn picked(s: &EnvState) -> bool {
    s.attached && s.object_pos.z > PICK_HEIGHT
}

fn final_ok(s: &EnvState) -> bool {
    match s.task {
        Task::Pushing => s.object_pos.dist_xy(s.target_pos) <= SUCCESS_RADIUS,
        Task::PickPlace => !s.attached && s.object_pos.dist_xy(s.target_pos) <= SUCCESS_RADIUS,
        Task::PickReach => false,
    }
}

fn reach_task_ok(s: &EnvState) -> bool {
    s.task == Task::PickReach && s.attached && s.stick_far_end().dist(s.target_pos) <= SUCCESS_RADIUS
}

impl StageTracker {
    pub fn new(initial: &EnvState) -> Self {
        let mut t = Self {
            task: initial.task,
            reach: false,
            pick: false,
            reach_task: false,
            current_final: false,
        };
        t.observe(initial);
        t
    }

    pub fn observe(&mut self, s: &EnvState) {
        self.reach |= reached(s);
        self.pick |= picked(s);
        self.reach_task |= reach_task_ok(s);
        self.current_final = final_ok(s);
    }

    /// Flags as they would stand if the episode ended at the last observed
    /// state.
    pub fn flags(&self) -> StageFlags {
        let reach = self.reach;
        let pick = self.task.has_grasp() && self.pick && reach;
        let raw_task = match self.task {
            Task::PickReach => self.reach_task,
            _ => self.current_final,
        };
        let task = raw_task
            && match self.task {
                Task::Pushing => reach,
                _ => pick,
            };
        StageFlags { reach, pick, task }
    }

    pub fn complete(&self) -> bool {
        self.flags().task
    }
}

/// Recomputes stage flags from the raw state trace of a finished record,
/// independent of whatever was tracked online.
pub fn success_metrics(record: &EpisodeRecord) -> StageFlags {
    let task = record.task;
    let offset = record.initial_state.stick_grasp_offset;
    let mut reach = false;
    let mut pick = false;
    let mut reach_task = false;
    let mut scan = |ee: super::Vec3, obj: super::Vec3, attached: bool| {
        reach |= ee.dist(obj) <= REACH_RADIUS;
        pick |= attached && obj.z > PICK_HEIGHT;
        if task == Task::PickReach && attached {
            reach_task |= (obj + offset).dist(record.initial_state.target_pos) <= SUCCESS_RADIUS;
        }
    };
    for s in &record.steps {
        scan(s.q_ee, s.q_obj, s.attached);
    }
    let last = &record.final_state;
    scan(last.ee_pos, last.object_pos, last.attached);

    let target = record.initial_state.target_pos;
    let raw_task = match task {
        Task::Pushing => last.object_pos.dist_xy(target) <= SUCCESS_RADIUS,
        Task::PickPlace => !last.attached && last.object_pos.dist_xy(target) <= SUCCESS_RADIUS,
        Task::PickReach => reach_task,
    };
    let pick = task.has_grasp() && pick && reach;
    let task_ok = raw_task
        && match task {
            Task::Pushing => reach,
            _ => pick,
        };
    StageFlags {
        reach,
        pick,
        task: task_ok,
    }
}
