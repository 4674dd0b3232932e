use crate::env::geometry::MAX_STEP;
use crate::env::{ActionCommand, GripperCommand, Vec3};
use crate::nn::LstmMemory;
use crate::policy::{HeadOutputs, PolicyModel};
use crate::rng::rng_for;
use crate::{Error, Result};

/// Commands shorter than this have no usable direction.
pub const NORM_EPS: f64 = 1e-9;

/// Stochastic decoder outputs drawn for one tick from the same embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionSampleSet {
    pub tick: u32,
    pub samples: Vec<HeadOutputs>,
}

impl ActionSampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Splits a command into weighted magnitude and direction:
/// `[λ‖u‖, (1-λ) u/‖u‖]`.
pub fn transform_action(u: [f64; 3], lambda: f64) -> Result<[f64; 4]> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!("lambda {lambda} outside [0,1]")));
    }
    let n = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    if !n.is_finite() {
        return Err(Error::NonFinite("action sample".into()));
    }
    if n < NORM_EPS {
        return Ok([lambda * n, 0.0, 0.0, 0.0]);
    }
    let k = (1.0 - lambda) / n;
    Ok([lambda * n, k * u[0], k * u[1], k * u[2]])
}

/// Trace of the unbiased sample covariance of `xs`.
pub fn trace_covariance(xs: &[[f64; 4]]) -> Result<f64> {
    if xs.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "covariance needs at least two samples, got {}",
            xs.len()
        )));
    }
    // deviations are taken from the first sample so that identical samples
    // give exactly zero
    let n = xs.len() as f64;
    let x0 = xs[0];
    let mut mean = [0.0; 4];
    for x in xs {
        for k in 0..4 {
            mean[k] += x[k] - x0[k];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let ss: f64 = xs
        .iter()
        .map(|x| (0..4).map(|k| (x[k] - x0[k] - mean[k]).powi(2)).sum::<f64>())
        .sum();
    Ok(ss / (n - 1.0))
}

/// Scalar uncertainty of a sample set: spread of the transformed
/// end-effector commands. The gripper head does not contribute.
pub fn uncertainty_from_samples(set: &ActionSampleSet, lambda: f64) -> Result<f64> {
    let xs = set
        .samples
        .iter()
        .map(|s| transform_action(s.delta_ee, lambda))
        .collect::<Result<Vec<_>>>()?;
    trace_covariance(&xs)
}

/// Componentwise mean of the sampled end-effector commands, in head units.
pub fn mean_delta(set: &ActionSampleSet) -> Result<[f64; 3]> {
    if set.is_empty() {
        return Err(Error::InvalidInput("empty sample set".into()));
    }
    let n = set.len() as f64;
    let mut m = [0.0; 3];
    for s in &set.samples {
        for k in 0..3 {
            m[k] += s.delta_ee[k];
        }
    }
    Ok(m.map(|v| v / n))
}

/// Mean command: averaged displacement, and the gripper class with the
/// highest mean probability (lowest class on ties).
pub fn mean_action(set: &ActionSampleSet) -> Result<ActionCommand> {
    let d = mean_delta(set)?;
    let n = set.len() as f64;
    let mut probs = [0.0; 3];
    for s in &set.samples {
        let p = s.grip_probs();
        for k in 0..3 {
            probs[k] += p[k];
        }
    }
    probs.iter_mut().for_each(|p| *p /= n);
    let mut best = 0;
    for k in 1..3 {
        if probs[k] > probs[best] {
            best = k;
        }
    }
    Ok(ActionCommand::new(
        Vec3::from(d) * MAX_STEP,
        GripperCommand::from_class(best).expect("three gripper classes"),
    ))
}

/// Advances the LSTM once and draws `samples` stochastic decoder passes;
/// pass `k` uses its own stream derived from `(noise_root, k)`.
pub fn mc_sample(
    model: &PolicyModel,
    s: &[f64],
    mem: &LstmMemory,
    samples: usize,
    noise_root: u64,
) -> Result<(ActionSampleSet, Vec<f64>, LstmMemory)> {
    if samples == 0 {
        return Err(Error::InvalidInput("sample count must be positive".into()));
    }
    let (e, next) = model.lstm_step(s, mem)?;
    let outs = (0..samples)
        .map(|k| {
            let mut rng = rng_for(noise_root, &[k as u64]);
            model.decode(&e, Some(&mut rng))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((ActionSampleSet { tick: 0, samples: outs }, e, next))
}
