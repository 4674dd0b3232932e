use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::{observe, reset, step_applied, ActionCommand, EnvState, EpisodeRecord, GripperCommand, ObservationMode, StageTracker, StepKind, Task, Vec3};
use crate::nn::LstmMemory;
use crate::policy::{FrameBuffer, PolicyModel};
use crate::uncertainty::{UncertaintyTrace, DEFAULT_WINDOW};
use crate::{Error, Result};

pub const FIFO_CAPACITY: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryMode {
    /// Backtrack to the least uncertain recent state, then follow the
    /// candidate action with the lowest predicted uncertainty.
    MinUnc,
    /// Random walk, then forget the LSTM memory.
    Rand,
    /// Move to a random point near the start pose, then forget the memory.
    Init,
    /// Monitoring only; never recovers.
    None,
}

impl RecoveryMode {
    pub const ALL: [RecoveryMode; 4] = [RecoveryMode::None, RecoveryMode::Rand, RecoveryMode::Init, RecoveryMode::MinUnc];

    pub fn as_str(self) -> &'static str {
        match self {
            RecoveryMode::MinUnc => "min_unc",
            RecoveryMode::Rand => "rand",
            RecoveryMode::Init => "init",
            RecoveryMode::None => "none",
        }
    }
}

impl fmt::Display for RecoveryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RecoveryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown recovery mode `{s}` (expected none, rand, init or min_unc)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// MC samples per tick.
    pub samples: usize,
    /// Window-sum threshold; `+inf` disables recovery.
    pub threshold: f64,
    pub window: usize,
    /// Minimum ticks between activations before any doubling.
    pub t_recovery_init: u64,
    pub backtrack_depth: usize,
    pub recovery_steps: u32,
    pub mode: RecoveryMode,
    pub max_steps: u32,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            samples: 50,
            threshold: f64::INFINITY,
            window: DEFAULT_WINDOW,
            t_recovery_init: 40,
            backtrack_depth: FIFO_CAPACITY,
            recovery_steps: 25,
            mode: RecoveryMode::None,
            max_steps: 120,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::Config(format!("need at least 2 MC samples, got {}", self.samples)));
        }
        if self.window == 0 || self.t_recovery_init == 0 || self.max_steps == 0 {
            return Err(Error::Config("window, T_recovery and max_steps must be positive".into()));
        }
        if self.backtrack_depth == 0 || self.backtrack_depth > FIFO_CAPACITY {
            return Err(Error::Config(format!(
                "backtrack depth must be in 1..={FIFO_CAPACITY}, got {}",
                self.backtrack_depth
            )));
        }
        if self.threshold.is_nan() {
            return Err(Error::Config("threshold is NaN".into()));
        }
        Ok(())
    }
}

/// A revisitable point of the recent trajectory. `applied_delta` is the
/// net end-effector displacement that led from the previous entry to this
/// one, so undoing newer entries walks the gripper back.
#[derive(Clone, Debug, PartialEq)]
pub struct BacktrackEntry {
    pub tick: u32,
    pub ee_pos: Vec3,
    pub applied_delta: Vec3,
    pub mem: LstmMemory,
    pub uncertainty: f64,
}

/// Everything the controller carries through an episode.
#[derive(Clone, Debug)]
pub struct ControllerState {
    pub env: EnvState,
    pub tracker: StageTracker,
    pub record: EpisodeRecord,
    pub fifo: VecDeque<BacktrackEntry>,
    pub trace: UncertaintyTrace,
    pub t_recovery: u64,
    pub last_recovery_tick: u32,
    pub activations: usize,
    pub buffer: FrameBuffer,
    pub mem: LstmMemory,
    obs_mode: ObservationMode,
    depth: usize,
    /// Displacement accumulated since the newest fifo entry was pushed.
    since_entry: Vec3,
}

impl ControllerState {
    pub fn new(policy: &PolicyModel, task: Task, scene_seed: u64, cfg: &ControllerConfig) -> Result<Self> {
        cfg.validate()?;
        let env = reset(task, scene_seed);
        let pc = policy.config();
        Ok(Self {
            tracker: StageTracker::new(&env),
            record: EpisodeRecord::new(env.clone(), scene_seed),
            fifo: VecDeque::with_capacity(cfg.backtrack_depth),
            trace: UncertaintyTrace::new(cfg.window)?,
            t_recovery: cfg.t_recovery_init,
            last_recovery_tick: 0,
            activations: 0,
            buffer: FrameBuffer::new(pc.frames, &observe(&env, pc.obs_mode)),
            mem: LstmMemory::zeros(pc.lstm_width),
            obs_mode: pc.obs_mode,
            depth: cfg.backtrack_depth,
            since_entry: Vec3::ZERO,
            env,
        })
    }

    pub fn tick(&self) -> u32 {
        self.env.tick
    }

    /// Records the current state as a backtrack candidate, evicting the
    /// oldest entry when full.
    pub fn push_entry(&mut self, uncertainty: f64) {
        if self.fifo.len() == self.depth {
            self.fifo.pop_front();
        }
        self.fifo.push_back(BacktrackEntry {
            tick: self.env.tick,
            ee_pos: self.env.ee_pos,
            applied_delta: self.since_entry,
            mem: self.mem.clone(),
            uncertainty,
        });
        self.since_entry = Vec3::ZERO;
    }

    /// Applies one command to the simulator and books it everywhere.
    pub fn execute(&mut self, action: ActionCommand, uncertainty: Option<f64>, kind: StepKind) {
        let (next, applied) = step_applied(&self.env, &action);
        self.record.push_step(&self.env, None, action, uncertainty, kind);
        self.tracker.observe(&next);
        self.since_entry = self.since_entry + applied;
        self.env = next;
        let obs = observe(&self.env, self.obs_mode);
        self.buffer.push(&obs);
    }

    /// Books a gate activation at the current tick and returns the interval
    /// that was in force when the gate opened.
    pub fn activate(&mut self) -> u64 {
        let at_gate = self.t_recovery;
        self.activations += 1;
        self.t_recovery = self.t_recovery.saturating_mul(2);
        self.last_recovery_tick = self.env.tick;
        at_gate
    }

    pub fn refill_buffer(&mut self) {
        let obs = observe(&self.env, self.obs_mode);
        self.buffer = FrameBuffer::new(self.buffer.len(), &obs);
    }

    pub fn done(&self, max_steps: u32) -> bool {
        self.tracker.complete() || self.env.tick >= max_steps
    }
}

/// The gate: strictly more than `T_recovery` ticks since the last
/// activation and a window sum strictly above the threshold.
pub fn should_recover(cs: &ControllerState, cfg: &ControllerConfig) -> bool {
    if cfg.mode == RecoveryMode::None {
        return false;
    }
    let Ok(sum) = cs.trace.current() else {
        return false;
    };
    let elapsed = u64::from(cs.env.tick.saturating_sub(cs.last_recovery_tick));
    elapsed > cs.t_recovery && sum > cfg.threshold
}

/// Walks back to the least uncertain fifo entry (earliest on ties) by
/// replaying the negated displacements of every newer entry with the
/// gripper held, then restores that entry's LSTM memory. Objects are not
/// rewound, so under contact the old state is only approximately reached.
/// Returns the target tick, or `None` when the fifo is empty.
pub fn backtrack(cs: &mut ControllerState, max_steps: u32) -> Option<u32> {
    if cs.fifo.is_empty() {
        log::warn!("backtrack requested with an empty history at tick {}", cs.env.tick);
        return None;
    }
    let mut best = 0;
    for (k, e) in cs.fifo.iter().enumerate() {
        if e.uncertainty < cs.fifo[best].uncertainty {
            best = k;
        }
    }
    let undo: Vec<Vec3> = cs.fifo.iter().skip(best + 1).rev().map(|e| e.applied_delta).collect();
    // Motion already made since the newest entry is undone first.
    let pending = cs.since_entry;
    for delta in std::iter::once(pending).filter(|d| *d != Vec3::ZERO).chain(undo) {
        if cs.done(max_steps) {
            break;
        }
        cs.execute(ActionCommand::new(-delta, GripperCommand::NoOp), None, StepKind::Backtrack);
    }
    cs.fifo.truncate(best + 1);
    let target = cs.fifo.back().expect("fifo holds the target");
    cs.mem = target.mem.clone();
    let tick = target.tick;
    // The target entry now describes the current state again.
    cs.since_entry = Vec3::ZERO;
    cs.refill_buffer();
    Some(tick)
}
