use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{
    expert_action, observe, reset, step, EnvState, EpisodeRecord, GripperCommand, Observation,
    ObservationMode, ProprioState, StageFlags, StageTracker, StepKind, StepRecord, Task, Vec3,
};
use crate::nn::Tensor;
use crate::rng::{derive, stream};
use crate::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;

const MIN_EXPERT_SUCCESS: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpawnSpec {
    pub cols: usize,
    pub rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub task: Task,
    pub horizon: u32,
    pub obs_mode: ObservationMode,
    pub spawn: SpawnSpec,
    pub generator_seed: u64,
    pub count: usize,
    pub attempts: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoDataset {
    pub header: DatasetHeader,
    pub records: Vec<EpisodeRecord>,
}

/// Runs the expert from the scene of `scene_seed` until full success or
/// `horizon` ticks, whichever comes first.
pub fn expert_episode(task: Task, scene_seed: u64, mode: ObservationMode, horizon: u32) -> EpisodeRecord {
    let mut s = reset(task, scene_seed);
    let mut tracker = StageTracker::new(&s);
    let mut rec = EpisodeRecord::new(s.clone(), scene_seed);
    for _ in 0..horizon {
        if tracker.complete() {
            break;
        }
        let a = expert_action(&s);
        let next = step(&s, &a);
        rec.push_step(&s, Some(observe(&s, mode)), a, None, StepKind::Expert);
        tracker.observe(&next);
        s = next;
    }
    rec.finish(s, tracker.flags());
    rec
}

/// Collects `count` successful expert demonstrations on successive scene
/// seeds. Fails if the expert success rate drops below 90%.
pub fn generate_demos(
    task: Task,
    count: usize,
    base_seed: u64,
    mode: ObservationMode,
    horizon: u32,
) -> Result<DemoDataset> {
    if count == 0 {
        return Err(Error::InvalidInput("demo count must be positive".into()));
    }
    let mut records = Vec::with_capacity(count);
    let mut attempts = 0usize;
    let mut failed_seeds = Vec::new();
    while records.len() < count {
        let scene_seed = derive(base_seed, &[stream::SCENE, task.id(), attempts as u64]);
        attempts += 1;
        let rec = expert_episode(task, scene_seed, mode, horizon);
        if rec.stage_flags.task {
            records.push(rec);
        } else {
            failed_seeds.push(scene_seed);
            let rate = records.len() as f64 / attempts as f64;
            if attempts >= 20 && rate < MIN_EXPERT_SUCCESS {
                return Err(Error::Aborted(format!(
                    "{task} expert succeeded on {}/{} scenes (below {:.0}%); failing scene seeds: {:?}",
                    records.len(),
                    attempts,
                    MIN_EXPERT_SUCCESS * 100.0,
                    &failed_seeds[..failed_seeds.len().min(10)]
                )));
            }
        }
    }
    if !failed_seeds.is_empty() {
        log::warn!("{task}: expert failed on {} of {attempts} scenes", failed_seeds.len());
    }
    Ok(DemoDataset {
        header: DatasetHeader {
            format_version: DATASET_FORMAT_VERSION,
            task,
            horizon,
            obs_mode: mode,
            spawn: SpawnSpec { cols: 6, rows: 8 },
            generator_seed: base_seed,
            count,
            attempts,
        },
        records,
    })
}

fn round_sig6(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.5e}").parse().unwrap_or(v)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header(DatasetHeader),
    Step(StepLine),
    EpisodeEnd(EndLine),
}

#[derive(Serialize, Deserialize)]
struct StepLine {
    episode_id: usize,
    t: u32,
    task: Task,
    obs_mode: ObservationMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    state_vec: Option<Vec<f64>>,
    proprio: [f64; 4],
    action: [f64; 3],
    gripper: GripperCommand,
    q_obj: [f64; 3],
    q_ee: [f64; 3],
    attached: bool,
}

#[derive(Serialize, Deserialize)]
struct EndLine {
    episode_id: usize,
    scene_seed: u64,
    stage_flags: StageFlags,
    terminal_tick: u32,
    initial_state: EnvState,
    final_state: EnvState,
}

pub fn write_dataset<W: Write>(mut w: W, ds: &DemoDataset) -> Result<()> {
    let line = |l: &Line, w: &mut W| -> Result<()> {
        serde_json::to_writer(&mut *w, l)?;
        w.write_all(b"\n")?;
        Ok(())
    };
    line(&Line::Header(ds.header.clone()), &mut w)?;
    for (id, rec) in ds.records.iter().enumerate() {
        for s in &rec.steps {
            let (grid, state_vec) = match &s.observation {
                Some(Observation::Grid(g)) => (Some(g.data().iter().map(|&v| round_sig6(v)).collect()), None),
                Some(Observation::State(v)) => (None, Some(v.clone())),
                None => return Err(Error::Format(format!("episode {id} step {} has no observation", s.t))),
            };
            let sl = StepLine {
                episode_id: id,
                t: s.t,
                task: rec.task,
                obs_mode: ds.header.obs_mode,
                grid,
                state_vec,
                proprio: s.proprio.to_array(),
                action: s.action.delta_ee.to_array(),
                gripper: s.action.gripper,
                q_obj: s.q_obj.to_array(),
                q_ee: s.q_ee.to_array(),
                attached: s.attached,
            };
            line(&Line::Step(sl), &mut w)?;
        }
        line(
            &Line::EpisodeEnd(EndLine {
                episode_id: id,
                scene_seed: rec.scene_seed,
                stage_flags: rec.stage_flags,
                terminal_tick: rec.terminal_tick,
                initial_state: rec.initial_state.clone(),
                final_state: rec.final_state.clone(),
            }),
            &mut w,
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<DemoDataset> {
    let mut header: Option<DatasetHeader> = None;
    let mut records = Vec::new();
    let mut pending: Vec<StepRecord> = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("dataset line {}: {e}", lineno + 1)))?;
        match parsed {
            Line::Header(h) => {
                if lineno != 0 {
                    return Err(Error::Format("header must be the first line".into()));
                }
                if h.format_version != DATASET_FORMAT_VERSION {
                    return Err(Error::Format(format!(
                        "unsupported dataset format version {}",
                        h.format_version
                    )));
                }
                header = Some(h);
            }
            Line::Step(sl) => {
                let hdr = header
                    .as_ref()
                    .ok_or_else(|| Error::Format("step before header".into()))?;
                if sl.episode_id != records.len() {
                    return Err(Error::Format(format!(
                        "line {}: episode id {} out of sequence",
                        lineno + 1,
                        sl.episode_id
                    )));
                }
                let observation = match (hdr.obs_mode, sl.grid, sl.state_vec) {
                    (ObservationMode::GridImage, Some(g), _) => {
                        Observation::Grid(Tensor::new(vec![3, 16, 16], g)?)
                    }
                    (ObservationMode::OracleState, _, Some(v)) => Observation::State(v),
                    _ => {
                        return Err(Error::Format(format!(
                            "line {}: observation missing for mode {}",
                            lineno + 1,
                            hdr.obs_mode
                        )))
                    }
                };
                pending.push(StepRecord {
                    t: sl.t,
                    observation: Some(observation),
                    proprio: ProprioState::from_array(sl.proprio),
                    action: super::ActionCommand::new(Vec3::from(sl.action), sl.gripper),
                    q_obj: sl.q_obj.into(),
                    q_ee: sl.q_ee.into(),
                    attached: sl.attached,
                    uncertainty: None,
                    kind: StepKind::Expert,
                });
            }
            Line::EpisodeEnd(el) => {
                if el.episode_id != records.len() {
                    return Err(Error::Format(format!(
                        "line {}: episode end {} out of sequence",
                        lineno + 1,
                        el.episode_id
                    )));
                }
                let mut rec = EpisodeRecord::new(el.initial_state, el.scene_seed);
                rec.steps = std::mem::take(&mut pending);
                rec.final_state = el.final_state;
                rec.stage_flags = el.stage_flags;
                rec.terminal_tick = el.terminal_tick;
                records.push(rec);
            }
        }
    }
    let header = header.ok_or_else(|| Error::Format("empty dataset".into()))?;
    if !pending.is_empty() {
        return Err(Error::Format("dataset ends inside an episode".into()));
    }
    if records.len() != header.count {
        return Err(Error::Format(format!(
            "header announces {} episodes, found {}",
            header.count,
            records.len()
        )));
    }
    Ok(DemoDataset { header, records })
}
