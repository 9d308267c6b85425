//! PPO-style inner loop with pluggable drift function and update rule.

mod config;
mod gae;
mod loss;
mod train;

pub use config::{AgentSpec, PpoConfig};
pub use gae::{compute_gae, normalize_advantages, AdvantageSet, RolloutBatch};
pub use loss::{
    log_softmax, mirror_policy_loss, ppo_total_loss, Agent, LossCoefs, Minibatch, PolicyLoss, TotalLoss,
    MAX_MASKED_FRACTION,
};
pub use train::{train_agent, write_curves_csv, EnvSource, TrainResult, RETURN_WINDOW};
pub(crate) use train::csv_err;
