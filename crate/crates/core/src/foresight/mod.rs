//! Uncertainty foresight: a small MLP distilled from the policy's own
//! Monte-Carlo uncertainty, used to pick the candidate action expected to
//! lead to the least uncertain next state.

mod collect;
mod model;

pub use collect::{
    collect_distillation_data, read_foresight_dataset, skewness, write_foresight_dataset,
    ForesightDataset, ForesightHeader, ForesightSample, FORESIGHT_FORMAT_VERSION,
};
pub use model::{
    action_features, load_foresight, min_uncertainty_action, save_foresight, train_foresight,
    ForesightModel, ForesightReport, ForesightTrainConfig, MinUncChoice, ACTION_FEATURES,
};
