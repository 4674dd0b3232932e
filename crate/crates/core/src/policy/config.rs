use serde::{Deserialize, Serialize};

use crate::env::{ObservationMode, GRID_LEN};
use crate::nn::{AdamConfig, DropoutConfig};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Two stride-2 convolutions over the channel-stacked frames, then a
    /// dense projection.
    GridConv,
    /// Dense projection of the stacked oracle state vectors.
    StateDense,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub obs_mode: ObservationMode,
    /// Frames in the input buffer.
    pub frames: usize,
    pub conv_channels: [usize; 2],
    pub feature_width: usize,
    pub proprio_tile: usize,
    pub lstm_width: usize,
    pub n_dropout_layers: usize,
    pub n_fc: usize,
    pub fc_width: usize,
    /// Norm/direction weighting used when scoring uncertainty.
    pub lambda: f64,
    pub dropout: DropoutConfig,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            obs_mode: ObservationMode::GridImage,
            frames: 4,
            conv_channels: [8, 16],
            feature_width: 32,
            proprio_tile: 4,
            lstm_width: 64,
            n_dropout_layers: 1,
            n_fc: 1,
            fc_width: 64,
            lambda: 0.3,
            dropout: DropoutConfig::default(),
        }
    }
}

impl PolicyConfig {
    pub fn with_dropout_layers(mut self, n: usize) -> Self {
        self.n_dropout_layers = n;
        self.n_fc = n;
        self
    }

    pub fn encoder_kind(&self) -> EncoderKind {
        match self.obs_mode {
            ObservationMode::GridImage => EncoderKind::GridConv,
            ObservationMode::OracleState => EncoderKind::StateDense,
        }
    }

    pub fn frame_len(&self) -> usize {
        match self.obs_mode {
            ObservationMode::GridImage => GRID_LEN,
            ObservationMode::OracleState => 9,
        }
    }

    pub fn state_width(&self) -> usize {
        self.feature_width + 4 * self.proprio_tile
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fc != self.n_dropout_layers {
            return Err(Error::Config(format!(
                "fully connected layer count ({}) must equal dropout layer count ({})",
                self.n_fc, self.n_dropout_layers
            )));
        }
        if !(1..=2).contains(&self.n_dropout_layers) {
            return Err(Error::Config(format!(
                "dropout layer count must be 1 or 2, got {}",
                self.n_dropout_layers
            )));
        }
        if self.frames == 0 || self.feature_width == 0 || self.lstm_width == 0 || self.fc_width == 0 {
            return Err(Error::Config("layer widths and frame count must be positive".into()));
        }
        if self.conv_channels.contains(&0) {
            return Err(Error::Config("conv channel counts must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0,1]", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Episodes per optimizer update.
    pub batch_episodes: usize,
    pub val_fraction: f64,
    pub adam: AdamConfig,
    /// Global gradient-norm ceiling applied before each update.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_episodes: 8,
            val_fraction: 0.1,
            adam: AdamConfig::default(),
            clip_norm: 5.0,
            seed: 0,
        }
    }
}
