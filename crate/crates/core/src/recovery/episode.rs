use std::io::{BufRead, Write};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::controller::{backtrack, should_recover, ControllerConfig, ControllerState, RecoveryMode};
use crate::env::geometry::{HOME, MAX_STEP, WORKSPACE_MAX, WORKSPACE_MIN};
use crate::env::{clip_delta, ActionCommand, EpisodeRecord, GripperCommand, StepKind, Task, Vec3};
use crate::foresight::{min_uncertainty_action, ForesightModel, MinUncChoice};
use crate::nn::LstmMemory;
use crate::policy::PolicyModel;
use crate::rng::{derive, rng_for, stream, Rng};
use crate::uncertainty::{mc_sample, mean_action, uncertainty_from_samples};
use crate::{Error, Result};

/// Radius of the re-initialisation ball around the home pose.
pub const INIT_RADIUS: f64 = 0.08;

/// One gate activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryLogRow {
    pub episode_id: usize,
    /// 1-based within the episode.
    pub activation_index: usize,
    pub tick: u32,
    pub mode: RecoveryMode,
    pub window_sum: f64,
    pub threshold: f64,
    pub t_recovery_at_gate: u64,
    pub backtrack_target_tick: Option<u32>,
    pub end_tick: u32,
    pub post_window_sum: f64,
}

fn noise_root(noise_seed: u64, tick: u32) -> u64 {
    derive(noise_seed, &[stream::MC, u64::from(tick)])
}

/// One min-uncertainty tick: sample candidates, execute the one with the
/// lowest predicted next-tick uncertainty and keep monitoring.
pub fn min_unc_step(
    cs: &mut ControllerState,
    policy: &PolicyModel,
    foresight: &ForesightModel,
    cfg: &ControllerConfig,
    noise_seed: u64,
) -> Result<MinUncChoice> {
    let s = policy.encode_buffer(&cs.buffer, &cs.env.proprio())?;
    let choice = min_uncertainty_action(policy, foresight, &s, &cs.mem, cfg.samples, noise_root(noise_seed, cs.tick()))?;
    let u = uncertainty_from_samples(&choice.set, policy.config().lambda)?;
    cs.trace.push(u)?;
    cs.push_entry(u);
    cs.mem = choice.next_mem.clone();
    cs.execute(choice.action, Some(u), StepKind::Recovery);
    Ok(choice)
}

/// Backtrack, then follow the minimum-uncertainty candidate for
/// `recovery_steps` ticks. Returns the backtrack target tick.
pub fn recover_min_unc(
    cs: &mut ControllerState,
    policy: &PolicyModel,
    foresight: &ForesightModel,
    cfg: &ControllerConfig,
    noise_seed: u64,
) -> Result<Option<u32>> {
    let target = backtrack(cs, cfg.max_steps);
    for _ in 0..cfg.recovery_steps {
        if cs.done(cfg.max_steps) {
            break;
        }
        min_unc_step(cs, policy, foresight, cfg, noise_seed)?;
    }
    Ok(target)
}

fn forget(cs: &mut ControllerState) {
    cs.mem = LstmMemory::zeros(cs.mem.width());
    // Stored memories belong to the forgotten context.
    cs.fifo.clear();
    cs.refill_buffer();
}

/// Uniform random deltas with the gripper held, then a memory reset.
pub fn recover_rand(cs: &mut ControllerState, cfg: &ControllerConfig, rng: &mut Rng) {
    for _ in 0..cfg.recovery_steps {
        if cs.done(cfg.max_steps) {
            break;
        }
        let d = Vec3::new(
            rng.gen_range(-MAX_STEP..=MAX_STEP),
            rng.gen_range(-MAX_STEP..=MAX_STEP),
            rng.gen_range(-MAX_STEP..=MAX_STEP),
        );
        cs.execute(ActionCommand::new(d, GripperCommand::NoOp), None, StepKind::Recovery);
    }
    forget(cs);
}

/// Uniform point of the ball around the home pose, clamped to the
/// workspace.
pub fn sample_init_target(rng: &mut Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));
        if v.norm() <= 1.0 {
            return (HOME + v * INIT_RADIUS).clamp(WORKSPACE_MIN, WORKSPACE_MAX);
        }
    }
}

/// Opens the gripper and drives to a random point near the start pose,
/// then resets the memory. Returns the sampled point.
pub fn recover_init(cs: &mut ControllerState, cfg: &ControllerConfig, rng: &mut Rng) -> Vec3 {
    let target = sample_init_target(rng);
    for _ in 0..cfg.recovery_steps {
        if cs.done(cfg.max_steps) || (cs.env.ee_pos == target && cs.env.gripper_open >= 1.0) {
            break;
        }
        let d = clip_delta(target - cs.env.ee_pos);
        cs.execute(ActionCommand::new(d, GripperCommand::Open), None, StepKind::Recovery);
    }
    forget(cs);
    target
}

/// Runs one monitored episode: sample, gate, then either recover or
/// execute the mean action, until task success or `max_steps` ticks.
pub fn run_episode(
    policy: &PolicyModel,
    foresight: Option<&ForesightModel>,
    task: Task,
    scene_seed: u64,
    cfg: &ControllerConfig,
    noise_seed: u64,
    episode_id: usize,
) -> Result<(EpisodeRecord, Vec<RecoveryLogRow>)> {
    let foresight = match (cfg.mode, foresight) {
        (RecoveryMode::MinUnc, None) => {
            return Err(Error::Config("min_unc recovery needs a foresight model".into()));
        }
        (_, f) => f,
    };
    let lambda = policy.config().lambda;
    let mut cs = ControllerState::new(policy, task, scene_seed, cfg)?;
    let mut log = Vec::new();
    while !cs.done(cfg.max_steps) {
        let s = policy.encode_buffer(&cs.buffer, &cs.env.proprio())?;
        let (set, _, next_mem) = mc_sample(policy, &s, &cs.mem, cfg.samples, noise_root(noise_seed, cs.tick()))?;
        let u = uncertainty_from_samples(&set, lambda)?;
        let window_sum = cs.trace.push(u)?;
        cs.push_entry(u);
        if should_recover(&cs, cfg) {
            let tick = cs.tick();
            let t_recovery_at_gate = cs.activate();
            let mut rng = rng_for(noise_seed, &[stream::RECOVERY, cs.activations as u64]);
            let backtrack_target_tick = match cfg.mode {
                RecoveryMode::MinUnc => {
                    let f = foresight.expect("checked above");
                    recover_min_unc(&mut cs, policy, f, cfg, noise_seed)?
                }
                RecoveryMode::Rand => {
                    recover_rand(&mut cs, cfg, &mut rng);
                    None
                }
                RecoveryMode::Init => {
                    recover_init(&mut cs, cfg, &mut rng);
                    None
                }
                RecoveryMode::None => unreachable!("gate is closed without recovery"),
            };
            log::debug!(
                "episode {episode_id}: {} recovery #{} at tick {tick} (window {window_sum:.4})",
                cfg.mode,
                cs.activations
            );
            log.push(RecoveryLogRow {
                episode_id,
                activation_index: cs.activations,
                tick,
                mode: cfg.mode,
                window_sum,
                threshold: cfg.threshold,
                t_recovery_at_gate,
                backtrack_target_tick,
                end_tick: cs.tick(),
                post_window_sum: cs.trace.current()?,
            });
            continue;
        }
        cs.mem = next_mem;
        cs.execute(mean_action(&set)?, Some(u), StepKind::Policy);
    }
    let flags = cs.tracker.flags();
    let mut record = cs.record;
    record.finish(cs.env, flags);
    Ok((record, log))
}

const LOG_HEADER: &str =
    "episode_id,activation_index,tick,mode,window_sum,C,T_recovery_at_gate,backtrack_target_tick,end_tick,post_window_sum";

pub fn write_recovery_log<W: Write>(mut w: W, rows: &[RecoveryLogRow]) -> Result<()> {
    writeln!(w, "{LOG_HEADER}")?;
    for r in rows {
        let target = r.backtrack_target_tick.map(|t| t.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.episode_id,
            r.activation_index,
            r.tick,
            r.mode,
            r.window_sum,
            r.threshold,
            r.t_recovery_at_gate,
            target,
            r.end_tick,
            r.post_window_sum
        )?;
    }
    Ok(())
}

fn field<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Format(format!("recovery log line {line}: cannot parse `{s}`")))
}

pub fn read_recovery_log<R: BufRead>(r: R) -> Result<Vec<RecoveryLogRow>> {
    let mut lines = r.lines();
    if lines.next().transpose()?.as_deref() != Some(LOG_HEADER) {
        return Err(Error::Format("recovery log header missing".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let n = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(Error::Format(format!("recovery log line {n}: expected 10 fields, got {}", f.len())));
        }
        rows.push(RecoveryLogRow {
            episode_id: field(f[0], n)?,
            activation_index: field(f[1], n)?,
            tick: field(f[2], n)?,
            mode: f[3].parse()?,
            window_sum: field(f[4], n)?,
            threshold: field(f[5], n)?,
            t_recovery_at_gate: field(f[6], n)?,
            backtrack_target_tick: if f[7].is_empty() { None } else { Some(field(f[7], n)?) },
            end_tick: field(f[8], n)?,
            post_window_sum: field(f[9], n)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{success_metrics, ObservationMode};
    use crate::foresight::action_features;
    use crate::policy::{rollout, Controller, PolicyConfig};

    fn policy(mode: ObservationMode) -> PolicyModel {
        let cfg = PolicyConfig {
            obs_mode: mode,
            ..PolicyConfig::default()
        };
        PolicyModel::new(cfg, 500, 3).unwrap()
    }

    fn cfg(mode: RecoveryMode) -> ControllerConfig {
        ControllerConfig {
            samples: 6,
            mode,
            max_steps: 40,
            ..ControllerConfig::default()
        }
    }

    #[test]
    fn monitoring_only_matches_plain_rollout() {
        let p = policy(ObservationMode::GridImage);
        for task in Task::ALL {
            for seed in 0..3 {
                let c = ControllerConfig {
                    threshold: 0.0,
                    ..cfg(RecoveryMode::None)
                };
                let (rec, log) = run_episode(&p, None, task, seed, &c, 77 + seed, 0).unwrap();
                let plain = rollout(&p, task, seed, Controller::McMean { samples: 6 }, 40, 77 + seed).unwrap();
                assert!(log.is_empty());
                assert_eq!(serde_json::to_vec(&rec).unwrap(), serde_json::to_vec(&plain).unwrap());
            }
        }
    }

    #[test]
    fn min_unc_requires_foresight() {
        let p = policy(ObservationMode::OracleState);
        let err = run_episode(&p, None, Task::Pushing, 0, &cfg(RecoveryMode::MinUnc), 0, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn forced_low_threshold_obeys_backoff() {
        let p = policy(ObservationMode::OracleState);
        let f = ForesightModel::new(64, 8, false, 1.0, 1).unwrap();
        for mode in [RecoveryMode::MinUnc, RecoveryMode::Rand, RecoveryMode::Init] {
            let c = ControllerConfig {
                threshold: 0.0,
                t_recovery_init: 3,
                recovery_steps: 2,
                max_steps: 120,
                ..cfg(mode)
            };
            let (rec, log) = run_episode(&p, Some(&f), Task::Pushing, 5, &c, 9, 4).unwrap();
            assert!(log.len() >= 4, "{mode}: {} activations", log.len());
            let mut last = 0;
            for (k, row) in log.iter().enumerate() {
                assert_eq!(row.activation_index, k + 1);
                assert_eq!(row.t_recovery_at_gate, 3 << k);
                assert!(u64::from(row.tick - last) > row.t_recovery_at_gate);
                assert!(row.window_sum > row.threshold);
                assert_eq!(row.episode_id, 4);
                last = row.tick;
            }
            assert_eq!(rec.stage_flags, success_metrics(&rec));
            assert!(rec.steps.iter().any(|s| s.kind == StepKind::Recovery));
            let (again, log2) = run_episode(&p, Some(&f), Task::Pushing, 5, &c, 9, 4).unwrap();
            assert_eq!(again, rec);
            assert_eq!(log2, log);
        }
    }

    #[test]
    fn random_walk_holds_the_gripper_and_forgets() {
        let p = policy(ObservationMode::OracleState);
        let c = cfg(RecoveryMode::Rand);
        let mut cs = ControllerState::new(&p, Task::PickPlace, 2, &c).unwrap();
        cs.mem = LstmMemory {
            hidden: vec![0.5; 64],
            cell: vec![-0.5; 64],
        };
        cs.push_entry(1.0);
        recover_rand(&mut cs, &c, &mut rng_for(3, &[]));
        assert_eq!(cs.record.len(), 25);
        for s in &cs.record.steps {
            assert_eq!(s.action.gripper, GripperCommand::NoOp);
            assert!(s.action.delta_ee.to_array().iter().all(|d| d.abs() <= MAX_STEP));
        }
        assert!(cs.mem.is_zero());
        assert!(cs.fifo.is_empty());
        let mut other = ControllerState::new(&p, Task::PickPlace, 2, &c).unwrap();
        recover_rand(&mut other, &c, &mut rng_for(3, &[]));
        assert_eq!(other.record, cs.record);
    }

    #[test]
    fn init_targets_stay_in_the_workspace() {
        let mut rng = rng_for(8, &[]);
        for _ in 0..10_000 {
            let t = sample_init_target(&mut rng);
            assert_eq!(t.clamp(WORKSPACE_MIN, WORKSPACE_MAX), t);
            assert!(t.dist(HOME) <= INIT_RADIUS + 1e-12);
        }
    }

    #[test]
    fn init_recovery_opens_and_reaches_the_target() {
        let p = policy(ObservationMode::OracleState);
        let c = cfg(RecoveryMode::Init);
        let mut start_rng = rng_for(12, &[]);
        let mut reached = 0;
        let n = 200;
        for seed in 0..n {
            let mut cs = ControllerState::new(&p, Task::PickPlace, seed, &c).unwrap();
            cs.env.ee_pos = Vec3::new(
                start_rng.gen_range(0.2..0.8),
                start_rng.gen_range(0.2..0.8),
                start_rng.gen_range(0.04..0.2),
            );
            cs.env.gripper_open = 0.0;
            cs.mem.hidden[0] = 1.0;
            let target = recover_init(&mut cs, &c, &mut rng_for(seed, &[1]));
            assert_eq!(cs.env.gripper_open, 1.0);
            assert!(cs.record.steps.iter().all(|s| s.action.gripper == GripperCommand::Open));
            assert!(cs.mem.is_zero());
            reached += usize::from(cs.env.ee_pos.dist(target) <= 0.02);
        }
        assert!(reached * 100 >= 95 * n as usize, "{reached}/{n}");
    }

    #[test]
    fn min_unc_steps_execute_the_foresight_argmin() {
        let p = policy(ObservationMode::GridImage);
        let f = ForesightModel::new(64, 16, true, 0.5, 2).unwrap();
        let c = cfg(RecoveryMode::MinUnc);
        let mut cs = ControllerState::new(&p, Task::Pushing, 1, &c).unwrap();
        for _ in 0..15 {
            let before = cs.clone();
            let choice = min_unc_step(&mut cs, &p, &f, &c, 21).unwrap();
            let s = p.encode_buffer(&before.buffer, &before.env.proprio()).unwrap();
            let (set, e, _) = mc_sample(&p, &s, &before.mem, c.samples, noise_root(21, before.tick())).unwrap();
            let scores: Vec<f64> = set
                .samples
                .iter()
                .map(|h| f.predict_uncertainty(&e, &action_features(h)).unwrap())
                .collect();
            let best = (0..scores.len()).fold(0, |b, k| if scores[k] < scores[b] { k } else { b });
            assert_eq!(choice.index, best);
            assert_eq!(choice.scores, scores);
            let executed = cs.record.steps.last().unwrap();
            assert_eq!(executed.action.delta_ee, set.samples[best].delta_world());
            assert_eq!(executed.action.gripper, set.samples[best].gripper());
        }
        assert_eq!(cs.trace.len(), 15);
    }

    #[test]
    fn zero_recovery_steps_only_backtrack() {
        let p = policy(ObservationMode::OracleState);
        let f = ForesightModel::new(64, 8, false, 1.0, 1).unwrap();
        let c = ControllerConfig {
            threshold: 0.0,
            t_recovery_init: 4,
            recovery_steps: 0,
            ..cfg(RecoveryMode::MinUnc)
        };
        let (rec, log) = run_episode(&p, Some(&f), Task::Pushing, 3, &c, 5, 0).unwrap();
        assert!(!log.is_empty());
        assert!(log.iter().all(|r| r.backtrack_target_tick.is_some()));
        assert!(rec.steps.iter().all(|s| s.kind != StepKind::Recovery));
    }

    #[test]
    fn log_round_trips() {
        let rows = vec![
            RecoveryLogRow {
                episode_id: 3,
                activation_index: 1,
                tick: 41,
                mode: RecoveryMode::MinUnc,
                window_sum: 0.123456789,
                threshold: 0.1,
                t_recovery_at_gate: 40,
                backtrack_target_tick: Some(30),
                end_tick: 70,
                post_window_sum: 0.05,
            },
            RecoveryLogRow {
                episode_id: 4,
                activation_index: 2,
                tick: 9,
                mode: RecoveryMode::Rand,
                window_sum: 1.5,
                threshold: f64::INFINITY,
                t_recovery_at_gate: 80,
                backtrack_target_tick: None,
                end_tick: 34,
                post_window_sum: 1.5,
            },
        ];
        let mut buf = Vec::new();
        write_recovery_log(&mut buf, &rows).unwrap();
        assert_eq!(read_recovery_log(&buf[..]).unwrap(), rows);
        assert!(read_recovery_log(&b"nope\n"[..]).is_err());
    }
}
