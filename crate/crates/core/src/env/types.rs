use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::nn::Tensor;
use crate::Error;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dist(self, other: Vec3) -> f64 {
        (self - other).norm()
    }

    pub fn dist_xy(self, other: Vec3) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn clamp(self, lo: Vec3, hi: Vec3) -> Vec3 {
        Vec3::new(
            self.x.clamp(lo.x, hi.x),
            self.y.clamp(lo.y, hi.y),
            self.z.clamp(lo.z, hi.z),
        )
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Pushing,
    PickPlace,
    PickReach,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Pushing, Task::PickPlace, Task::PickReach];

    pub fn id(self) -> u64 {
        match self {
            Task::Pushing => 0,
            Task::PickPlace => 1,
            Task::PickReach => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Pushing => "pushing",
            Task::PickPlace => "pick_place",
            Task::PickReach => "pick_reach",
        }
    }

    /// Column labels of the stage flags, in reporting order.
    pub fn stage_names(self) -> &'static [&'static str] {
        match self {
            Task::Pushing => &["reach", "push"],
            Task::PickPlace => &["reach", "pick", "place"],
            Task::PickReach => &["reach", "pick", "task"],
        }
    }

    pub fn has_grasp(self) -> bool {
        !matches!(self, Task::Pushing)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "pushing" | "push" => Ok(Task::Pushing),
            "pick_place" | "pick-and-place" | "pickplace" => Ok(Task::PickPlace),
            "pick_reach" | "pick-and-reach" | "pickreach" => Ok(Task::PickReach),
            _ => Err(Error::Config(format!("unknown task `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperCommand {
    Open,
    Close,
    NoOp,
}

impl GripperCommand {
    pub const ALL: [GripperCommand; 3] = [GripperCommand::Open, GripperCommand::Close, GripperCommand::NoOp];

    pub fn class_index(self) -> usize {
        match self {
            GripperCommand::Open => 0,
            GripperCommand::Close => 1,
            GripperCommand::NoOp => 2,
        }
    }

    pub fn from_class(idx: usize) -> Option<Self> {
        Self::ALL.get(idx).copied()
    }

    pub fn one_hot(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self.class_index()] = 1.0;
        v
    }
}

/// Per-tick command: end-effector displacement plus gripper class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionCommand {
    pub delta_ee: Vec3,
    pub gripper: GripperCommand,
}

impl ActionCommand {
    pub const IDLE: ActionCommand = ActionCommand {
        delta_ee: Vec3::ZERO,
        gripper: GripperCommand::NoOp,
    };

    pub fn new(delta_ee: Vec3, gripper: GripperCommand) -> Self {
        Self { delta_ee, gripper }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub task: Task,
    pub tick: u32,
    pub ee_pos: Vec3,
    pub gripper_open: f64,
    /// Cube centre, or the grasp end of the stick.
    pub object_pos: Vec3,
    pub object_yaw: f64,
    pub target_pos: Vec3,
    pub attached: bool,
    /// Far end of the stick minus its grasp end (zero for cube tasks).
    pub stick_grasp_offset: Vec3,
}

impl EnvState {
    /// Point that must reach the target for pick-and-reach.
    pub fn stick_far_end(&self) -> Vec3 {
        self.object_pos + self.stick_grasp_offset
    }

    pub fn proprio(&self) -> ProprioState {
        ProprioState {
            ee_pos: self.ee_pos,
            gripper_open: self.gripper_open,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMode {
    OracleState,
    GridImage,
}

impl FromStr for ObservationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "oracle_state" | "oracle" | "state" => Ok(ObservationMode::OracleState),
            "grid_image" | "grid" | "image" => Ok(ObservationMode::GridImage),
            _ => Err(Error::Config(format!("unknown observation mode `{s}`"))),
        }
    }
}

impl fmt::Display for ObservationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObservationMode::OracleState => "oracle_state",
            ObservationMode::GridImage => "grid_image",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observation {
    /// `[3 x 16 x 16]` blob image: end-effector, object, target channels.
    Grid(Tensor),
    /// End-effector, object and target positions (9 reals).
    State(Vec<f64>),
}

impl Observation {
    pub fn mode(&self) -> ObservationMode {
        match self {
            Observation::Grid(_) => ObservationMode::GridImage,
            Observation::State(_) => ObservationMode::OracleState,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        match self {
            Observation::Grid(t) => t.data(),
            Observation::State(v) => v,
        }
    }
}

/// Robot-side state fed to the policy next to the image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProprioState {
    pub ee_pos: Vec3,
    pub gripper_open: f64,
}

impl ProprioState {
    pub fn to_array(self) -> [f64; 4] {
        [self.ee_pos.x, self.ee_pos.y, self.ee_pos.z, self.gripper_open]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            ee_pos: Vec3::new(a[0], a[1], a[2]),
            gripper_open: a[3],
        }
    }
}

/// What produced a step of an episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Expert,
    Policy,
    Backtrack,
    Recovery,
}

/// One tick of an episode: the pre-action situation and the command applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<Observation>,
    pub proprio: ProprioState,
    pub action: ActionCommand,
    pub q_obj: Vec3,
    pub q_ee: Vec3,
    pub attached: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<f64>,
    pub kind: StepKind,
}

/// Full trace of one rollout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub task: Task,
    pub scene_seed: u64,
    pub initial_state: EnvState,
    pub steps: Vec<StepRecord>,
    pub final_state: EnvState,
    pub stage_flags: super::StageFlags,
    pub terminal_tick: u32,
}

impl EpisodeRecord {
    pub fn new(initial_state: EnvState, scene_seed: u64) -> Self {
        Self {
            task: initial_state.task,
            scene_seed,
            final_state: initial_state.clone(),
            initial_state,
            steps: Vec::new(),
            stage_flags: super::StageFlags::default(),
            terminal_tick: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Appends the step taken from `pre` (the state before the action).
    pub fn push_step(
        &mut self,
        pre: &EnvState,
        observation: Option<Observation>,
        action: ActionCommand,
        uncertainty: Option<f64>,
        kind: StepKind,
    ) {
        self.steps.push(StepRecord {
            t: pre.tick,
            observation,
            proprio: pre.proprio(),
            action,
            q_obj: pre.object_pos,
            q_ee: pre.ee_pos,
            attached: pre.attached,
            uncertainty,
            kind,
        });
    }

    pub fn finish(&mut self, final_state: EnvState, flags: super::StageFlags) {
        self.terminal_tick = final_state.tick;
        self.final_state = final_state;
        self.stage_flags = flags;
    }

    pub fn uncertainties(&self) -> Vec<f64> {
        self.steps.iter().filter_map(|s| s.uncertainty).collect()
    }
}
