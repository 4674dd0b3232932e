use serde::{Deserialize, Serialize};

use super::check_finite;
use crate::{Error, Result};

/// Mean squared error over components and its gradient.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::dim("mse", target.len(), pred.len()));
    }
    let n = pred.len() as f64;
    let loss = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n;
    let grad = pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect();
    Ok((loss, grad))
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Categorical cross-entropy of `logits` against a target distribution.
pub fn cce(logits: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if logits.len() != target.len() || logits.is_empty() {
        return Err(Error::dim("cce", target.len(), logits.len()));
    }
    let ls = log_softmax(logits);
    let loss = -ls.iter().zip(target).map(|(l, t)| l * t).sum::<f64>();
    let mass: f64 = target.iter().sum();
    let grad = ls
        .iter()
        .zip(target)
        .map(|(l, t)| l.exp() * mass - t)
        .collect();
    Ok((loss, grad))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub delta_ee: f64,
    pub gripper: f64,
    pub q_obj: f64,
    pub q_ee: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            delta_ee: 1.0,
            gripper: 1.0,
            q_obj: 1.0,
            q_ee: 1.0,
        }
    }
}

/// Supervision for one tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImitationTargets {
    pub delta_ee: [f64; 3],
    /// One-hot (or any distribution) over `[open, close, no-op]`.
    pub gripper: [f64; 3],
    pub q_obj: [f64; 3],
    pub q_ee: [f64; 3],
}

#[derive(Clone, Debug)]
pub struct ImitationLoss {
    pub total: f64,
    pub delta_ee: f64,
    pub gripper: f64,
    pub q_obj: f64,
    pub q_ee: f64,
    /// Gradients per head, same order as the inputs.
    pub grads: [Vec<f64>; 4],
}

/// Behaviour-cloning objective: MSE on the end-effector command, CCE on the
/// gripper class, MSE on both auxiliary position heads.
///
/// `heads` is `[delta_ee, gripper_logits, q_obj, q_ee]`.
pub fn imitation_loss(heads: [&[f64]; 4], target: &ImitationTargets, weights: &LossWeights) -> Result<ImitationLoss> {
    for (h, name) in heads.iter().zip(["delta_ee", "gripper", "q_obj", "q_ee"]) {
        check_finite(h, &format!("loss input `{name}`"))?;
    }
    let (l_d, mut g_d) = mse(heads[0], &target.delta_ee)?;
    let (l_g, mut g_g) = cce(heads[1], &target.gripper)?;
    let (l_o, mut g_o) = mse(heads[2], &target.q_obj)?;
    let (l_e, mut g_e) = mse(heads[3], &target.q_ee)?;
    for (g, w) in [
        (&mut g_d, weights.delta_ee),
        (&mut g_g, weights.gripper),
        (&mut g_o, weights.q_obj),
        (&mut g_e, weights.q_ee),
    ] {
        g.iter_mut().for_each(|v| *v *= w);
    }
    let total = weights.delta_ee * l_d + weights.gripper * l_g + weights.q_obj * l_o + weights.q_ee * l_e;
    Ok(ImitationLoss {
        total,
        delta_ee: l_d,
        gripper: l_g,
        q_obj: l_o,
        q_ee: l_e,
        grads: [g_d, g_g, g_o, g_e],
    })
}
