use std::io::{Read, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::collect::ForesightDataset;
use crate::env::ActionCommand;
use crate::nn::{
    read_checkpoint, visit_child, visit_child_mut, write_checkpoint, Activation, AdamConfig, Dense,
    LstmMemory, OptimizerState, Param, Parameterized,
};
use crate::policy::{HeadOutputs, PolicyModel};
use crate::rng::{rng_for, stream};
use crate::uncertainty::{mc_sample, ActionSampleSet};
use crate::{Error, Result};

/// Width of the action part of the foresight input.
pub const ACTION_FEATURES: usize = 6;

/// `[ΔEE in head units, gripper probabilities]` of one decoder sample.
pub fn action_features(h: &HeadOutputs) -> [f64; ACTION_FEATURES] {
    let p = h.grip_probs();
    [h.delta_ee[0], h.delta_ee[1], h.delta_ee[2], p[0], p[1], p[2]]
}

/// Two-layer MLP over `embedding ++ action features`; the softplus output
/// keeps predictions non-negative. Internally it regresses
/// `f(u) / target_scale` where `f` is `log1p` or the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct ForesightModel {
    pub hidden: Dense,
    pub output: Dense,
    embed_width: usize,
    log_target: bool,
    target_scale: f64,
}

impl ForesightModel {
    pub fn new(embed_width: usize, hidden: usize, log_target: bool, target_scale: f64, seed: u64) -> Result<Self> {
        if !(target_scale.is_finite() && target_scale > 0.0) {
            return Err(Error::InvalidInput(format!("target scale {target_scale} must be positive")));
        }
        let mut rng = rng_for(seed, &[stream::INIT, 1]);
        let mut output = Dense::init(hidden, 1, Activation::Softplus, &mut rng);
        // Start at the normalised mean: softplus(ln(e - 1)) = 1.
        output.bias.value[0] = (std::f64::consts::E - 1.0).ln();
        Ok(Self {
            hidden: Dense::init(embed_width + ACTION_FEATURES, hidden, Activation::Tanh, &mut rng),
            output,
            embed_width,
            log_target,
            target_scale,
        })
    }

    pub fn embed_width(&self) -> usize {
        self.embed_width
    }

    pub fn log_target(&self) -> bool {
        self.log_target
    }

    fn input(&self, e: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        if e.len() != self.embed_width {
            return Err(Error::dim("foresight embedding", self.embed_width, e.len()));
        }
        if a.len() != ACTION_FEATURES {
            return Err(Error::dim("foresight action features", ACTION_FEATURES, a.len()));
        }
        let mut x = Vec::with_capacity(e.len() + a.len());
        x.extend_from_slice(e);
        x.extend_from_slice(a);
        Ok(x)
    }

    fn encode_target(&self, u: f64) -> f64 {
        let f = if self.log_target { u.ln_1p() } else { u };
        f / self.target_scale
    }

    fn decode_target(&self, z: f64) -> f64 {
        let f = z * self.target_scale;
        if self.log_target {
            f.exp_m1()
        } else {
            f
        }
    }

    /// Predicted next-tick uncertainty for taking `a` from embedding `e`.
    pub fn predict_uncertainty(&self, e: &[f64], a: &[f64]) -> Result<f64> {
        let x = self.input(e, a)?;
        let z = self.output.forward(&self.hidden.forward(&x)?)?[0];
        Ok(self.decode_target(z).max(0.0))
    }

    /// Squared error of one sample in the internal regression space.
    pub fn sample_loss(&self, e: &[f64], a: &[f64], target: f64) -> Result<f64> {
        let x = self.input(e, a)?;
        let z = self.output.forward(&self.hidden.forward(&x)?)?[0];
        Ok((z - self.encode_target(target)).powi(2))
    }

    /// [`Self::sample_loss`], also adding `scale` times its gradient to the
    /// parameter gradients.
    pub fn accumulate(&mut self, e: &[f64], a: &[f64], target: f64, scale: f64) -> Result<f64> {
        let x = self.input(e, a)?;
        let (h, hc) = self.hidden.forward_cached(&x)?;
        let (z, oc) = self.output.forward_cached(&h)?;
        let r = z[0] - self.encode_target(target);
        let dh = self.output.backward(&oc, &[2.0 * r * scale], true);
        self.hidden.backward(&hc, &dh, false);
        Ok(r * r)
    }
}

impl Parameterized for ForesightModel {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        visit_child(&self.hidden, "hidden", f);
        visit_child(&self.output, "output", f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_child_mut(&mut self.hidden, "hidden", f);
        visit_child_mut(&mut self.output, "output", f);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForesightTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub hidden: usize,
    pub adam: AdamConfig,
    /// Fraction of episodes held out.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for ForesightTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch: 64,
            hidden: 64,
            adam: AdamConfig::default(),
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForesightReport {
    /// `(epoch, train mse, held-out mse)`, both in raw uncertainty units.
    pub curves: Vec<(usize, f64, f64)>,
    pub train_samples: usize,
    pub val_samples: usize,
    pub val_mse: f64,
    pub val_r2: f64,
}

fn mse_r2(model: &ForesightModel, ds: &ForesightDataset, idx: &[usize]) -> Result<(f64, f64)> {
    if idx.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let n = idx.len() as f64;
    let mean = idx.iter().map(|&i| ds.samples[i].target).sum::<f64>() / n;
    let mut sse = 0.0;
    let mut sst = 0.0;
    for &i in idx {
        let s = &ds.samples[i];
        let p = model.predict_uncertainty(&s.embedding, &s.action)?;
        sse += (p - s.target).powi(2);
        sst += (s.target - mean).powi(2);
    }
    let r2 = if sst > 0.0 { 1.0 - sse / sst } else { f64::NAN };
    Ok((sse / n, r2))
}

/// Distills the recorded uncertainties into a [`ForesightModel`] by
/// minibatch MSE regression. Episodes (not single ticks) are split into
/// training and held-out sets, so held-out scores measure generalisation to
/// unseen trajectories.
pub fn train_foresight(ds: &ForesightDataset, cfg: &ForesightTrainConfig) -> Result<(ForesightModel, ForesightReport)> {
    if ds.samples.len() < 100 {
        return Err(Error::InvalidInput(format!(
            "foresight training needs at least 100 samples, got {}",
            ds.samples.len()
        )));
    }
    if cfg.batch == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let width = ds.samples[0].embedding.len();
    let mut episodes: Vec<usize> = ds.samples.iter().map(|s| s.episode_id).collect();
    episodes.sort_unstable();
    episodes.dedup();
    episodes.shuffle(&mut rng_for(cfg.seed, &[stream::SPLIT, 1]));
    let n_val = ((episodes.len() as f64 * cfg.val_fraction).round() as usize).min(episodes.len() - 1);
    let val_eps: std::collections::BTreeSet<usize> = episodes[..n_val].iter().copied().collect();
    let (mut val_idx, mut train_idx) = (Vec::new(), Vec::new());
    for (i, s) in ds.samples.iter().enumerate() {
        if val_eps.contains(&s.episode_id) {
            val_idx.push(i);
        } else {
            train_idx.push(i);
        }
    }

    let f = |u: f64| if ds.header.log_target { u.ln_1p() } else { u };
    let scale = train_idx.iter().map(|&i| f(ds.samples[i].target)).sum::<f64>() / train_idx.len() as f64;
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let mut model = ForesightModel::new(width, cfg.hidden, ds.header.log_target, scale, cfg.seed)?;
    let mut opt = OptimizerState::new(model.num_params(), cfg.adam);
    let mut curves = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut rng_for(cfg.seed, &[stream::TRAIN_SHUFFLE, 1, epoch as u64]));
        let mut loss = 0.0;
        for batch in order.chunks(cfg.batch) {
            model.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let s = &ds.samples[i];
                loss += model.accumulate(&s.embedding, &s.action, s.target, scale)?;
            }
            opt.step_module(&mut model)?;
        }
        if !loss.is_finite() {
            return Err(Error::Aborted(format!(
                "foresight loss became {loss} at epoch {} (seed {})",
                epoch + 1,
                cfg.seed
            )));
        }
        let (train_mse, _) = mse_r2(&model, ds, &train_idx)?;
        let (val_mse, _) = mse_r2(&model, ds, &val_idx)?;
        log::debug!("foresight epoch {}: train {train_mse:.6} val {val_mse:.6}", epoch + 1);
        curves.push((epoch + 1, train_mse, val_mse));
    }
    let (val_mse, val_r2) = mse_r2(&model, ds, &val_idx)?;
    Ok((
        model,
        ForesightReport {
            curves,
            train_samples: train_idx.len(),
            val_samples: val_idx.len(),
            val_mse,
            val_r2,
        },
    ))
}

/// Result of scoring the candidates of one tick.
#[derive(Clone, Debug, PartialEq)]
pub struct MinUncChoice {
    pub action: ActionCommand,
    pub index: usize,
    pub scores: Vec<f64>,
    pub set: ActionSampleSet,
    pub embedding: Vec<f64>,
    pub next_mem: LstmMemory,
}

/// Draws `samples` candidate actions and returns the one whose predicted
/// next-tick uncertainty is smallest (lowest index on ties).
pub fn min_uncertainty_action(
    policy: &PolicyModel,
    foresight: &ForesightModel,
    s: &[f64],
    mem: &LstmMemory,
    samples: usize,
    noise_root: u64,
) -> Result<MinUncChoice> {
    if samples == 0 {
        return Err(Error::InvalidInput("need at least one candidate".into()));
    }
    let (set, e, next_mem) = mc_sample(policy, s, mem, samples, noise_root)?;
    let scores = set
        .samples
        .iter()
        .map(|h| foresight.predict_uncertainty(&e, &action_features(h)))
        .collect::<Result<Vec<_>>>()?;
    let mut index = 0;
    for k in 1..scores.len() {
        if scores[k] < scores[index] {
            index = k;
        }
    }
    let chosen = &set.samples[index];
    Ok(MinUncChoice {
        action: ActionCommand::new(chosen.delta_world(), chosen.gripper()),
        index,
        scores,
        set,
        embedding: e,
        next_mem,
    })
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    kind: String,
    embed_width: usize,
    hidden: usize,
    log_target: bool,
    target_scale: f64,
    policy_sha256: String,
}

pub fn save_foresight<W: Write>(w: W, model: &ForesightModel, policy_sha256: &str) -> Result<()> {
    let header = CheckpointHeader {
        kind: "foresight".into(),
        embed_width: model.embed_width,
        hidden: model.hidden.out_dim(),
        log_target: model.log_target,
        target_scale: model.target_scale,
        policy_sha256: policy_sha256.into(),
    };
    write_checkpoint(w, &header, &model.flat_values())
}

/// Loads a foresight checkpoint; also returns the checksum of the policy it
/// was distilled from.
pub fn load_foresight<R: Read>(r: R) -> Result<(ForesightModel, String)> {
    let (h, values): (CheckpointHeader, Vec<f64>) = read_checkpoint(r)?;
    if h.kind != "foresight" {
        return Err(Error::Format(format!("expected a foresight checkpoint, found `{}`", h.kind)));
    }
    let mut m = ForesightModel::new(h.embed_width, h.hidden, h.log_target, h.target_scale, 0)?;
    m.set_flat_values(&values)?;
    Ok((m, h.policy_sha256))
}
