//! Bayesian visuomotor policy: frame-stack encoder, LSTM, concrete-dropout
//! stack and four output heads, with training and closed-loop rollout.

mod config;
mod model;
mod rollout;
mod train;

pub use config::{EncoderKind, PolicyConfig, TrainConfig};
pub use model::{
    load_policy, save_policy, FrameBuffer, HeadOutputs, PolicyHeader, PolicyModel, StackLayer,
    HEAD_NAMES,
};
pub use rollout::{rollout, Controller};
pub use train::{
    episode_gradient, prepare_episode, train_policy, validation_loss, write_curves_csv, EpochStats,
    PreparedEpisode, TrainReport,
};
