use serde::{Deserialize, Serialize};

use super::model::{FrameBuffer, PolicyModel};
use crate::env::{observe, reset, step, ActionCommand, EpisodeRecord, StageTracker, StepKind, Task};
use crate::nn::LstmMemory;
use crate::rng::{derive, stream};
use crate::uncertainty::{mc_sample, mean_action, uncertainty_from_samples};
use crate::Result;

/// How the policy turns its outputs into a command.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    /// One pass with dropout gates at their expectation.
    Deterministic,
    /// Mean of `samples` stochastic passes; the spread is recorded as the
    /// per-tick uncertainty.
    McMean { samples: usize },
}

/// Closed-loop episode. LSTM memory persists over the whole episode; the
/// rollout stops at full task success or after `max_steps` ticks.
pub fn rollout(
    model: &PolicyModel,
    task: Task,
    scene_seed: u64,
    controller: Controller,
    max_steps: u32,
    noise_seed: u64,
) -> Result<EpisodeRecord> {
    let mode = model.config().obs_mode;
    let lambda = model.config().lambda;
    let mut state = reset(task, scene_seed);
    let mut tracker = StageTracker::new(&state);
    let mut rec = EpisodeRecord::new(state.clone(), scene_seed);
    let mut buffer = FrameBuffer::new(model.config().frames, &observe(&state, mode));
    let mut mem = LstmMemory::zeros(model.config().lstm_width);
    for _ in 0..max_steps {
        if tracker.complete() {
            break;
        }
        let s = model.encode_buffer(&buffer, &state.proprio())?;
        let (action, u) = match controller {
            Controller::Deterministic => {
                let (out, _, next) = model.policy_step(&s, &mem, None)?;
                mem = next;
                (ActionCommand::new(out.delta_world(), out.gripper()), None)
            }
            Controller::McMean { samples } => {
                let root = derive(noise_seed, &[stream::MC, state.tick as u64]);
                let (set, _, next) = mc_sample(model, &s, &mem, samples, root)?;
                mem = next;
                (mean_action(&set)?, Some(uncertainty_from_samples(&set, lambda)?))
            }
        };
        let next = step(&state, &action);
        rec.push_step(&state, None, action, u, StepKind::Policy);
        tracker.observe(&next);
        state = next;
        buffer.push(&observe(&state, mode));
    }
    rec.finish(state, tracker.flags());
    Ok(rec)
}
