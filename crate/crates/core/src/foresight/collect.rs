use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::action_features;
use crate::env::{observe, reset, step, ActionCommand, StageTracker, Task};
use crate::nn::LstmMemory;
use crate::policy::{FrameBuffer, PolicyModel};
use crate::rng::{derive, stream};
use crate::uncertainty::{mc_sample, uncertainty_from_samples};
use crate::{Error, Result};

pub const FORESIGHT_FORMAT_VERSION: u32 = 1;

/// Skew above which targets are regressed in `log1p` space.
const LOG_TARGET_SKEW: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForesightSample {
    pub episode_id: usize,
    pub t: u32,
    pub embedding: Vec<f64>,
    /// Executed command in head units followed by gripper probabilities.
    pub action: Vec<f64>,
    /// Uncertainty measured at the next tick.
    pub target: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForesightHeader {
    pub format_version: u32,
    pub policy_sha256: String,
    pub task: Task,
    pub samples_per_tick: usize,
    pub lambda: f64,
    pub episodes: usize,
    pub count: usize,
    pub seed: u64,
    pub max_steps: u32,
    pub target_skew: f64,
    pub log_target: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForesightDataset {
    pub header: ForesightHeader,
    pub samples: Vec<ForesightSample>,
}

/// Sample skewness (0 for fewer than three points or zero spread).
pub fn skewness(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 3 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    if m2 <= 0.0 {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}

/// Scene seed of exploration episode `episode` under `seed`.
pub fn exploration_scene(seed: u64, episode: usize) -> u64 {
    derive(seed, &[stream::EXPLORE, episode as u64])
}

fn explore_episode(
    policy: &PolicyModel,
    task: Task,
    episode: usize,
    seed: u64,
    samples: usize,
    max_steps: u32,
) -> Result<Vec<ForesightSample>> {
    let mode = policy.config().obs_mode;
    let lambda = policy.config().lambda;
    let mut state = reset(task, exploration_scene(seed, episode));
    let mut tracker = StageTracker::new(&state);
    let mut buffer = FrameBuffer::new(policy.config().frames, &observe(&state, mode));
    let mut mem = LstmMemory::zeros(policy.config().lstm_width);
    let mut out = Vec::new();
    let mut pending: Option<(u32, Vec<f64>, Vec<f64>)> = None;
    let noise_seed = derive(seed, &[stream::EXPLORE, episode as u64, 1]);
    for _ in 0..max_steps {
        if tracker.complete() {
            break;
        }
        let s = policy.encode_buffer(&buffer, &state.proprio())?;
        let root = derive(noise_seed, &[stream::MC, state.tick as u64]);
        let (set, e, next) = mc_sample(policy, &s, &mem, samples, root)?;
        mem = next;
        let u = uncertainty_from_samples(&set, lambda)?;
        if let Some((t, emb, act)) = pending.take() {
            out.push(ForesightSample {
                episode_id: episode,
                t,
                embedding: emb,
                action: act,
                target: u,
            });
        }
        let chosen = &set.samples[0];
        let action = ActionCommand::new(chosen.delta_world(), chosen.gripper());
        pending = Some((state.tick, e, action_features(chosen).to_vec()));
        let next_state = step(&state, &action);
        tracker.observe(&next_state);
        state = next_state;
        buffer.push(&observe(&state, mode));
    }
    Ok(out)
}

/// Exploration rollouts that execute the first Monte-Carlo sample at each
/// tick and record `(embedding, executed action, next-tick uncertainty)`.
/// An episode of `L` ticks contributes `L - 1` samples.
pub fn collect_distillation_data(
    policy: &PolicyModel,
    policy_sha256: &str,
    task: Task,
    episodes: usize,
    samples: usize,
    max_steps: u32,
    seed: u64,
) -> Result<ForesightDataset> {
    if episodes == 0 {
        return Err(Error::InvalidInput("episode count must be positive".into()));
    }
    if samples < 2 {
        return Err(Error::InvalidInput("need at least two samples per tick".into()));
    }
    let per_episode: Vec<Result<Vec<ForesightSample>>> = (0..episodes)
        .into_par_iter()
        .map(|ep| explore_episode(policy, task, ep, seed, samples, max_steps))
        .collect();
    let mut all = Vec::new();
    for r in per_episode {
        all.extend(r?);
    }
    let targets: Vec<f64> = all.iter().map(|s| s.target).collect();
    let skew = skewness(&targets);
    Ok(ForesightDataset {
        header: ForesightHeader {
            format_version: FORESIGHT_FORMAT_VERSION,
            policy_sha256: policy_sha256.to_string(),
            task,
            samples_per_tick: samples,
            lambda: policy.config().lambda,
            episodes,
            count: all.len(),
            seed,
            max_steps,
            target_skew: skew,
            log_target: skew > LOG_TARGET_SKEW,
        },
        samples: all,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header(ForesightHeader),
    Sample(ForesightSample),
}

pub fn write_foresight_dataset<W: Write>(mut w: W, ds: &ForesightDataset) -> Result<()> {
    serde_json::to_writer(&mut w, &Line::Header(ds.header.clone()))?;
    w.write_all(b"\n")?;
    for s in &ds.samples {
        serde_json::to_writer(&mut w, &Line::Sample(s.clone()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_foresight_dataset<R: BufRead>(r: R) -> Result<ForesightDataset> {
    let mut header = None;
    let mut samples = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("foresight data line {}: {e}", i + 1)))?
        {
            Line::Header(h) => {
                if h.format_version != FORESIGHT_FORMAT_VERSION {
                    return Err(Error::Format(format!(
                        "unsupported foresight data version {}",
                        h.format_version
                    )));
                }
                header = Some(h);
            }
            Line::Sample(s) => samples.push(s),
        }
    }
    let header = header.ok_or_else(|| Error::Format("foresight data has no header".into()))?;
    if header.count != samples.len() {
        return Err(Error::Format(format!(
            "header announces {} samples, found {}",
            header.count,
            samples.len()
        )));
    }
    Ok(ForesightDataset { header, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyConfig;

    #[test]
    fn skewness_of_symmetric_data_is_zero() {
        assert!(skewness(&[1.0, 2.0, 3.0, 4.0, 5.0]).abs() < 1e-12);
        assert!(skewness(&[0.0, 0.0, 0.0, 0.0, 10.0]) > 1.0);
    }

    #[test]
    fn episode_of_l_ticks_yields_l_minus_one_samples() {
        let policy = PolicyModel::new(PolicyConfig::default(), 100, 0).unwrap();
        let ds = collect_distillation_data(&policy, "x", Task::Pushing, 1, 4, 12, 3).unwrap();
        // an untrained policy will not finish the task in 12 ticks
        assert_eq!(ds.samples.len(), 11);
        assert!(ds.samples.iter().all(|s| s.target >= 0.0 && s.embedding.len() == 64));
        let mut buf = Vec::new();
        write_foresight_dataset(&mut buf, &ds).unwrap();
        assert_eq!(read_foresight_dataset(&buf[..]).unwrap(), ds);
    }
}
