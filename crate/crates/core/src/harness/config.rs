use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::{ObservationMode, Task};
use crate::nn::AdamConfig;
use crate::policy::{PolicyConfig, TrainConfig};
use crate::recovery::{ControllerConfig, RecoveryMode};
use crate::rng::derive;
use crate::{Error, Result};

/// A controller evaluated by the harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalMode {
    /// Single deterministic pass with dropout at its expectation.
    Vmc,
    /// MC-mean control with the given recovery behaviour.
    Bvmc(RecoveryMode),
}

impl EvalMode {
    pub const ALL: [EvalMode; 5] = [
        EvalMode::Vmc,
        EvalMode::Bvmc(RecoveryMode::None),
        EvalMode::Bvmc(RecoveryMode::Rand),
        EvalMode::Bvmc(RecoveryMode::Init),
        EvalMode::Bvmc(RecoveryMode::MinUnc),
    ];

    pub fn key(self) -> &'static str {
        match self {
            EvalMode::Vmc => "vmc",
            EvalMode::Bvmc(m) => m.as_str(),
        }
    }

    /// Row label in the results table.
    pub fn label(self) -> &'static str {
        match self {
            EvalMode::Vmc => "VMC",
            EvalMode::Bvmc(RecoveryMode::None) => "BVMC",
            EvalMode::Bvmc(RecoveryMode::Rand) => "BVMC + rand",
            EvalMode::Bvmc(RecoveryMode::Init) => "BVMC + init",
            EvalMode::Bvmc(RecoveryMode::MinUnc) => "BVMC + min unc",
        }
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.key() == s)
            .ok_or_else(|| Error::Config(format!("unknown evaluation mode `{s}` (expected vmc, none, rand, init or min_unc)")))
    }
}

/// Everything a pipeline run depends on. Read from and written back as a
/// flat `key = value` file; see [`RunConfig::KEYS`].
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub obs_mode: ObservationMode,
    pub demos: usize,
    pub horizon: u32,
    pub policy: PolicyConfig,
    pub epochs: usize,
    pub batch_episodes: usize,
    pub val_fraction: f64,
    pub lr: f64,
    pub clip_norm: f64,
    pub samples: usize,
    pub window: usize,
    pub t_recovery_init: u64,
    pub backtrack_depth: usize,
    pub recovery_steps: u32,
    /// Defaults to twice the demonstration horizon.
    pub max_steps: Option<u32>,
    pub n_val: usize,
    pub foresight_episodes: usize,
    pub foresight_epochs: usize,
    pub foresight_hidden: usize,
    pub n_eval: usize,
    pub n_binning: usize,
    pub modes: Vec<EvalMode>,
    pub threshold_rand: Option<f64>,
    pub threshold_init: Option<f64>,
    pub threshold_min_unc: Option<f64>,
    pub seed: u64,
    pub data_seed: Option<u64>,
    pub train_seed: Option<u64>,
    pub eval_seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::Pushing,
            obs_mode: ObservationMode::GridImage,
            demos: 500,
            horizon: 60,
            policy: PolicyConfig::default(),
            epochs: 150,
            batch_episodes: 8,
            val_fraction: 0.1,
            lr: AdamConfig::default().lr,
            clip_norm: 5.0,
            samples: 50,
            window: 20,
            t_recovery_init: 40,
            backtrack_depth: 20,
            recovery_steps: 25,
            max_steps: None,
            n_val: 200,
            foresight_episodes: 2000,
            foresight_epochs: 60,
            foresight_hidden: 64,
            n_eval: 100,
            n_binning: 400,
            modes: EvalMode::ALL.to_vec(),
            threshold_rand: None,
            threshold_init: None,
            threshold_min_unc: None,
            seed: 0,
            data_seed: None,
            train_seed: None,
            eval_seed: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.is_empty() || value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "auto".to_string(), |v| v.to_string())
}

impl RunConfig {
    /// Recognised keys, in the order they are written.
    pub const KEYS: [&'static str; 40] = [
        "task",
        "obs_mode",
        "demos",
        "horizon",
        "frames",
        "conv_channels",
        "feature_width",
        "proprio_tile",
        "lstm_width",
        "fc_layers",
        "fc_width",
        "lambda",
        "dropout_temperature",
        "dropout_init_rate",
        "dropout_length_scale",
        "epochs",
        "batch_episodes",
        "val_fraction",
        "lr",
        "clip_norm",
        "samples",
        "window",
        "t_recovery_init",
        "backtrack_depth",
        "recovery_steps",
        "max_steps",
        "n_val",
        "foresight_episodes",
        "foresight_epochs",
        "foresight_hidden",
        "n_eval",
        "n_binning",
        "modes",
        "threshold_rand",
        "threshold_init",
        "threshold_min_unc",
        "seed",
        "data_seed",
        "train_seed",
        "eval_seed",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "task" => self.task = v.parse()?,
            "obs_mode" => {
                self.obs_mode = v.parse()?;
                self.policy.obs_mode = self.obs_mode;
            }
            "demos" => self.demos = parse(key, v)?,
            "horizon" => self.horizon = parse(key, v)?,
            "frames" => self.policy.frames = parse(key, v)?,
            "conv_channels" => {
                let parts: Vec<&str> = v.split(',').map(str::trim).collect();
                if parts.len() != 2 {
                    return Err(Error::Config(format!("`conv_channels` needs two comma-separated values, got `{v}`")));
                }
                self.policy.conv_channels = [parse(key, parts[0])?, parse(key, parts[1])?];
            }
            "feature_width" => self.policy.feature_width = parse(key, v)?,
            "proprio_tile" => self.policy.proprio_tile = parse(key, v)?,
            "lstm_width" => self.policy.lstm_width = parse(key, v)?,
            "fc_layers" => self.policy = self.policy.clone().with_dropout_layers(parse(key, v)?),
            "fc_width" => self.policy.fc_width = parse(key, v)?,
            "lambda" => self.policy.lambda = parse(key, v)?,
            "dropout_temperature" => self.policy.dropout.temperature = parse(key, v)?,
            "dropout_init_rate" => self.policy.dropout.init_rate = parse(key, v)?,
            "dropout_length_scale" => self.policy.dropout.length_scale = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_episodes" => self.batch_episodes = parse(key, v)?,
            "val_fraction" => self.val_fraction = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "clip_norm" => self.clip_norm = parse(key, v)?,
            "samples" => self.samples = parse(key, v)?,
            "window" => self.window = parse(key, v)?,
            "t_recovery_init" => self.t_recovery_init = parse(key, v)?,
            "backtrack_depth" => self.backtrack_depth = parse(key, v)?,
            "recovery_steps" => self.recovery_steps = parse(key, v)?,
            "max_steps" => self.max_steps = parse_opt(key, v)?,
            "n_val" => self.n_val = parse(key, v)?,
            "foresight_episodes" => self.foresight_episodes = parse(key, v)?,
            "foresight_epochs" => self.foresight_epochs = parse(key, v)?,
            "foresight_hidden" => self.foresight_hidden = parse(key, v)?,
            "n_eval" => self.n_eval = parse(key, v)?,
            "n_binning" => self.n_binning = parse(key, v)?,
            "modes" => {
                self.modes = v
                    .split(',')
                    .map(str::trim)
                    .filter(|m| !m.is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?;
            }
            "threshold_rand" => self.threshold_rand = parse_opt(key, v)?,
            "threshold_init" => self.threshold_init = parse_opt(key, v)?,
            "threshold_min_unc" => self.threshold_min_unc = parse_opt(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "data_seed" => self.data_seed = parse_opt(key, v)?,
            "train_seed" => self.train_seed = parse_opt(key, v)?,
            "eval_seed" => self.eval_seed = parse_opt(key, v)?,
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let p = &self.policy;
        match key {
            "task" => self.task.to_string(),
            "obs_mode" => self.obs_mode.to_string(),
            "demos" => self.demos.to_string(),
            "horizon" => self.horizon.to_string(),
            "frames" => p.frames.to_string(),
            "conv_channels" => format!("{},{}", p.conv_channels[0], p.conv_channels[1]),
            "feature_width" => p.feature_width.to_string(),
            "proprio_tile" => p.proprio_tile.to_string(),
            "lstm_width" => p.lstm_width.to_string(),
            "fc_layers" => p.n_fc.to_string(),
            "fc_width" => p.fc_width.to_string(),
            "lambda" => p.lambda.to_string(),
            "dropout_temperature" => p.dropout.temperature.to_string(),
            "dropout_init_rate" => p.dropout.init_rate.to_string(),
            "dropout_length_scale" => p.dropout.length_scale.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_episodes" => self.batch_episodes.to_string(),
            "val_fraction" => self.val_fraction.to_string(),
            "lr" => self.lr.to_string(),
            "clip_norm" => self.clip_norm.to_string(),
            "samples" => self.samples.to_string(),
            "window" => self.window.to_string(),
            "t_recovery_init" => self.t_recovery_init.to_string(),
            "backtrack_depth" => self.backtrack_depth.to_string(),
            "recovery_steps" => self.recovery_steps.to_string(),
            "max_steps" => opt(self.max_steps),
            "n_val" => self.n_val.to_string(),
            "foresight_episodes" => self.foresight_episodes.to_string(),
            "foresight_epochs" => self.foresight_epochs.to_string(),
            "foresight_hidden" => self.foresight_hidden.to_string(),
            "n_eval" => self.n_eval.to_string(),
            "n_binning" => self.n_binning.to_string(),
            "modes" => self.modes.iter().map(|m| m.key()).collect::<Vec<_>>().join(","),
            "threshold_rand" => opt(self.threshold_rand),
            "threshold_init" => opt(self.threshold_init),
            "threshold_min_unc" => opt(self.threshold_min_unc),
            "seed" => self.seed.to_string(),
            "data_seed" => opt(self.data_seed),
            "train_seed" => opt(self.train_seed),
            "eval_seed" => opt(self.eval_seed),
            _ => unreachable!("key list and getter disagree on `{key}`"),
        }
    }

    /// Parses `key = value` lines; `#` starts a comment. Keys not present
    /// keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{raw}`", n + 1)))?;
            cfg.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fills every derived default so the written file pins the run.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.max_steps = Some(self.max_steps());
        c.data_seed = Some(self.data_seed());
        c.train_seed = Some(self.train_seed());
        c.eval_seed = Some(self.eval_seed());
        c
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in Self::KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if self.policy.obs_mode != self.obs_mode {
            return Err(Error::Config("policy observation mode disagrees with `obs_mode`".into()));
        }
        if self.demos == 0 {
            return Err(Error::Config("`demos` must be positive".into()));
        }
        if self.horizon == 0 || self.epochs == 0 || self.batch_episodes == 0 {
            return Err(Error::Config("`horizon`, `epochs` and `batch_episodes` must be positive".into()));
        }
        if self.n_val < 2 || self.n_eval == 0 || self.n_binning < 10 || self.foresight_episodes == 0 {
            return Err(Error::Config(
                "need n_val >= 2, n_eval >= 1, n_binning >= 10 and foresight_episodes >= 1".into(),
            ));
        }
        if self.modes.is_empty() {
            return Err(Error::Config("`modes` is empty".into()));
        }
        self.controller(RecoveryMode::None, f64::INFINITY).validate()
    }

    pub fn max_steps(&self) -> u32 {
        self.max_steps.unwrap_or(2 * self.horizon)
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or_else(|| derive(self.seed, &[1]))
    }

    pub fn train_seed(&self) -> u64 {
        self.train_seed.unwrap_or_else(|| derive(self.seed, &[2]))
    }

    pub fn eval_seed(&self) -> u64 {
        self.eval_seed.unwrap_or_else(|| derive(self.seed, &[3]))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_episodes: self.batch_episodes,
            val_fraction: self.val_fraction,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            clip_norm: self.clip_norm,
            seed: self.train_seed(),
        }
    }

    /// Per-mode threshold override, if any.
    pub fn threshold_override(&self, mode: RecoveryMode) -> Option<f64> {
        match mode {
            RecoveryMode::Rand => self.threshold_rand,
            RecoveryMode::Init => self.threshold_init,
            RecoveryMode::MinUnc => self.threshold_min_unc,
            RecoveryMode::None => None,
        }
    }

    pub fn controller(&self, mode: RecoveryMode, threshold: f64) -> ControllerConfig {
        ControllerConfig {
            samples: self.samples,
            threshold,
            window: self.window,
            t_recovery_init: self.t_recovery_init,
            backtrack_depth: self.backtrack_depth,
            recovery_steps: self.recovery_steps,
            mode,
            max_steps: self.max_steps(),
        }
    }
}
