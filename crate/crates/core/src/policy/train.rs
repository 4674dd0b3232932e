use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{PolicyConfig, TrainConfig};
use super::model::PolicyModel;
use crate::env::geometry::MAX_STEP;
use crate::env::{DemoDataset, EpisodeRecord, ProprioState};
use crate::nn::{imitation_loss, ImitationTargets, LossWeights, LstmMemory, OptimizerState, Parameterized};
use crate::rng::{derive, rng_for, stream};
use crate::{Error, Result};

/// One demonstration flattened into per-tick network inputs and targets.
#[derive(Clone, Debug)]
pub struct PreparedEpisode {
    pub frames: Vec<Vec<f64>>,
    pub proprio: Vec<ProprioState>,
    pub targets: Vec<ImitationTargets>,
}

impl PreparedEpisode {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Channel-stacked input at tick `t`, front-padded with frame 0.
    pub fn stacked(&self, t: usize, k: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(k * self.frames[0].len());
        for j in 0..k {
            let idx = (t + j + 1).saturating_sub(k);
            out.extend_from_slice(&self.frames[idx]);
        }
        out
    }
}

pub fn prepare_episode(rec: &EpisodeRecord, config: &PolicyConfig) -> Result<PreparedEpisode> {
    let mut ep = PreparedEpisode {
        frames: Vec::with_capacity(rec.len()),
        proprio: Vec::with_capacity(rec.len()),
        targets: Vec::with_capacity(rec.len()),
    };
    for s in &rec.steps {
        let obs = s.observation.as_ref().ok_or_else(|| {
            Error::InvalidInput(format!("episode step {} carries no observation", s.t))
        })?;
        if obs.mode() != config.obs_mode {
            return Err(Error::InvalidInput(format!(
                "dataset observation mode {} does not match policy mode {}",
                obs.mode(),
                config.obs_mode
            )));
        }
        if obs.as_slice().len() != config.frame_len() {
            return Err(Error::dim("observation length", config.frame_len(), obs.as_slice().len()));
        }
        let d = s.action.delta_ee * (1.0 / MAX_STEP);
        let t = ImitationTargets {
            delta_ee: d.to_array(),
            gripper: s.action.gripper.one_hot(),
            q_obj: s.q_obj.to_array(),
            q_ee: s.q_ee.to_array(),
        };
        let all = t.delta_ee.iter().chain(&t.q_obj).chain(&t.q_ee);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("targets at tick {}", s.t)));
        }
        ep.frames.push(obs.as_slice().to_vec());
        ep.proprio.push(s.proprio);
        ep.targets.push(t);
    }
    if ep.is_empty() {
        return Err(Error::InvalidInput("episode has no steps".into()));
    }
    Ok(ep)
}

/// Summed imitation loss of one episode under the given dropout noise stream,
/// and the gradient of `scale x` that sum (regularizers excluded).
pub fn episode_gradient(
    model: &PolicyModel,
    ep: &PreparedEpisode,
    noise_seed: u64,
    scale: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut work = model.clone();
    work.zero_grad();
    let k = model.config().frames;
    let w = model.config().lstm_width;
    let weights = LossWeights::default();
    let mut rng = rng_for(noise_seed, &[]);
    let mut mem = LstmMemory::zeros(w);
    let mut caches = Vec::with_capacity(ep.len());
    let mut dheads = Vec::with_capacity(ep.len());
    let mut loss_sum = 0.0;
    for t in 0..ep.len() {
        let noise = model.draw_noise(&mut rng);
        let (outs, next, cache) = model.forward_tick(&ep.stacked(t, k), &ep.proprio[t], &mem, &noise)?;
        let l = imitation_loss([&outs[0], &outs[1], &outs[2], &outs[3]], &ep.targets[t], &weights)?;
        loss_sum += l.total;
        let mut g = l.grads;
        g.iter_mut().flatten().for_each(|v| *v *= scale);
        dheads.push(g);
        caches.push(cache);
        mem = next;
    }
    let (mut dh, mut dc) = (vec![0.0; w], vec![0.0; w]);
    for (cache, dy) in caches.iter().zip(&dheads).rev() {
        let (a, b) = work.backward_tick(cache, dy, &dh, &dc);
        dh = a;
        dc = b;
    }
    Ok((loss_sum, work.flat_grads()))
}

/// Mean per-tick imitation loss with dropout gates at their expectation.
pub fn validation_loss(model: &PolicyModel, episodes: &[PreparedEpisode]) -> Result<f64> {
    let k = model.config().frames;
    let weights = LossWeights::default();
    let per_episode: Vec<Result<(f64, usize)>> = episodes
        .par_iter()
        .map(|ep| {
            let mut mem = LstmMemory::zeros(model.config().lstm_width);
            let mut sum = 0.0;
            for t in 0..ep.len() {
                let s = model.encode(&ep.stacked(t, k), &ep.proprio[t])?;
                let (out, _, next) = model.policy_step(&s, &mem, None)?;
                let l = imitation_loss(
                    [&out.delta_ee, &out.grip_logits, &out.q_obj, &out.q_ee],
                    &ep.targets[t],
                    &weights,
                )?;
                sum += l.total;
                mem = next;
            }
            Ok((sum, ep.len()))
        })
        .collect();
    let mut total = 0.0;
    let mut n = 0;
    for r in per_episode {
        let (s, c) = r?;
        total += s;
        n += c;
    }
    if n == 0 {
        return Err(Error::InvalidInput("no validation ticks".into()));
    }
    Ok(total / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub dropout_rates: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub initial_val_loss: f64,
    pub final_val_loss: f64,
    pub train_ticks: usize,
    /// Dataset indices held out for validation.
    pub val_episodes: Vec<usize>,
}

fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(seed, &[stream::SPLIT]));
    let n_val = ((n as f64 * val_fraction).round() as usize).min(n.saturating_sub(1));
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Behaviour cloning with full-episode backpropagation through time.
///
/// Each update averages the imitation loss over every tick of a batch of
/// episodes and adds the dropout regularizers once. When no episodes are
/// held out, validation loss is measured on the training set.
pub fn train_policy(
    dataset: &DemoDataset,
    config: &PolicyConfig,
    train_cfg: &TrainConfig,
) -> Result<(PolicyModel, TrainReport)> {
    config.validate()?;
    if dataset.records.is_empty() {
        return Err(Error::InvalidInput("dataset holds no episodes".into()));
    }
    if dataset.header.obs_mode != config.obs_mode {
        return Err(Error::InvalidInput(format!(
            "dataset mode {} does not match policy mode {}",
            dataset.header.obs_mode, config.obs_mode
        )));
    }
    if train_cfg.batch_episodes == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let prepared = dataset
        .records
        .iter()
        .map(|r| prepare_episode(r, config))
        .collect::<Result<Vec<_>>>()?;
    let seed = train_cfg.seed;
    let (train_idx, val_idx) = split_indices(prepared.len(), train_cfg.val_fraction, seed);
    let val_set: Vec<PreparedEpisode> = if val_idx.is_empty() {
        train_idx.iter().map(|&i| prepared[i].clone()).collect()
    } else {
        val_idx.iter().map(|&i| prepared[i].clone()).collect()
    };
    let train_ticks: usize = train_idx.iter().map(|&i| prepared[i].len()).sum();

    let mut model = PolicyModel::new(config.clone(), train_ticks, seed)?;
    let mut opt = OptimizerState::new(model.num_params(), train_cfg.adam);
    let layout = model.param_layout();
    let initial_val_loss = validation_loss(&model, &val_set)?;
    let mut epochs = Vec::with_capacity(train_cfg.epochs);

    for epoch in 0..train_cfg.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut rng_for(seed, &[stream::TRAIN_SHUFFLE, epoch as u64]));
        let mut epoch_loss = 0.0;
        let mut epoch_ticks = 0usize;
        for batch in order.chunks(train_cfg.batch_episodes) {
            let ticks: usize = batch.iter().map(|&i| prepared[i].len()).sum();
            let scale = 1.0 / ticks as f64;
            let results: Vec<Result<(f64, Vec<f64>)>> = batch
                .par_iter()
                .map(|&i| {
                    let noise = derive(seed, &[stream::TRAIN_NOISE, epoch as u64, i as u64]);
                    episode_gradient(&model, &prepared[i], noise, scale)
                })
                .collect();
            let mut grads = vec![0.0; model.num_params()];
            for r in results {
                let (l, g) = r?;
                epoch_loss += l;
                grads.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            epoch_ticks += ticks;
            model.set_flat_grads(&grads)?;
            model.regularizer_backward(1.0);
            let mut grads = model.flat_grads();
            let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm.is_finite() && norm > train_cfg.clip_norm {
                let s = train_cfg.clip_norm / norm;
                grads.iter_mut().for_each(|g| *g *= s);
            }
            let mut params = model.flat_values();
            opt.step(&mut params, &grads, Some(&layout))?;
            model.set_flat_values(&params)?;
        }
        let val_loss = validation_loss(&model, &val_set)?;
        if !val_loss.is_finite() {
            return Err(Error::Aborted(format!(
                "validation loss became {val_loss} at epoch {} (seed {seed})",
                epoch + 1
            )));
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            train_loss: epoch_loss / epoch_ticks as f64,
            val_loss,
            dropout_rates: model.dropout_rates(),
        };
        log::info!(
            "epoch {:>3}: train {:.5} val {:.5} p {:?}",
            stats.epoch,
            stats.train_loss,
            stats.val_loss,
            stats.dropout_rates
        );
        epochs.push(stats);
    }
    let final_val_loss = epochs.last().map_or(initial_val_loss, |e| e.val_loss);
    Ok((
        model,
        TrainReport {
            epochs,
            initial_val_loss,
            final_val_loss,
            train_ticks,
            val_episodes: val_idx,
        },
    ))
}

pub fn write_curves_csv<W: Write>(mut w: W, report: &TrainReport) -> Result<()> {
    let n_rates = report.epochs.first().map_or(0, |e| e.dropout_rates.len());
    write!(w, "epoch,train_loss,val_loss")?;
    for i in 0..n_rates {
        write!(w, ",p_{i}")?;
    }
    writeln!(w)?;
    for e in &report.epochs {
        write!(w, "{},{},{}", e.epoch, e.train_loss, e.val_loss)?;
        for p in &e.dropout_rates {
            write!(w, ",{p}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_demos, ObservationMode, Task};

    fn tiny_config(mode: ObservationMode) -> PolicyConfig {
        PolicyConfig {
            obs_mode: mode,
            conv_channels: [4, 8],
            feature_width: 16,
            lstm_width: 24,
            fc_width: 24,
            ..PolicyConfig::default()
        }
    }

    #[test]
    fn overfits_a_single_episode() {
        let ds = generate_demos(Task::Pushing, 1, 3, ObservationMode::OracleState, 60).unwrap();
        let cfg = tiny_config(ObservationMode::OracleState);
        let tc = TrainConfig {
            epochs: 200,
            batch_episodes: 1,
            val_fraction: 0.0,
            adam: crate::nn::AdamConfig {
                lr: 1e-2,
                ..Default::default()
            },
            ..TrainConfig::default()
        };
        let (_, report) = train_policy(&ds, &cfg, &tc).unwrap();
        assert!(
            report.final_val_loss < 0.1 * report.initial_val_loss,
            "{} -> {}",
            report.initial_val_loss,
            report.final_val_loss
        );
    }

    #[test]
    fn training_is_deterministic_and_seed_sensitive() {
        let ds = generate_demos(Task::PickPlace, 6, 4, ObservationMode::GridImage, 60).unwrap();
        let cfg = tiny_config(ObservationMode::GridImage);
        let tc = TrainConfig {
            epochs: 3,
            batch_episodes: 2,
            val_fraction: 0.2,
            ..TrainConfig::default()
        };
        let (a, ra) = train_policy(&ds, &cfg, &tc).unwrap();
        let (b, _) = train_policy(&ds, &cfg, &tc).unwrap();
        assert_eq!(a.flat_values(), b.flat_values());
        let (c, rc) = train_policy(&ds, &cfg, &TrainConfig { seed: 99, ..tc }).unwrap();
        assert_ne!(a.flat_values(), c.flat_values());
        assert!(rc.final_val_loss < 2.0 * ra.final_val_loss && ra.final_val_loss < 2.0 * rc.final_val_loss);
    }

    #[test]
    fn curves_have_one_row_per_epoch() {
        let report = TrainReport {
            epochs: (1..=3)
                .map(|e| EpochStats {
                    epoch: e,
                    train_loss: 1.0,
                    val_loss: 2.0,
                    dropout_rates: vec![0.1, 0.2],
                })
                .collect(),
            initial_val_loss: 3.0,
            final_val_loss: 2.0,
            train_ticks: 10,
            val_episodes: vec![],
        };
        let mut buf = Vec::new();
        write_curves_csv(&mut buf, &report).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "epoch,train_loss,val_loss,p_0,p_1");
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn mode_mismatch_rejected() {
        let ds = generate_demos(Task::Pushing, 1, 3, ObservationMode::OracleState, 60).unwrap();
        let cfg = tiny_config(ObservationMode::GridImage);
        assert!(train_policy(&ds, &cfg, &TrainConfig::default()).is_err());
    }

    #[test]
    fn stacking_pads_with_first_frame() {
        let ep = PreparedEpisode {
            frames: vec![vec![0.0], vec![1.0], vec![2.0]],
            proprio: vec![],
            targets: vec![],
        };
        assert_eq!(ep.stacked(0, 4), vec![0.0, 0.0, 0.0, 0.0]);
        assert_eq!(ep.stacked(2, 4), vec![0.0, 0.0, 1.0, 2.0]);
    }
}
