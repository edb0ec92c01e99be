//! Posterior-conditioned actor-critic trained with PPO and GAE, with the
//! recurrent and context-blind baselines.

mod gae;
mod loss;
mod policy;
mod trainer;

pub use gae::{compute_gae, normalize_advantages};
pub use loss::{
    clipped_surrogate, clipped_value_error, ppo_loss, PpoLossBreakdown, PpoLossConfig, PpoStep,
    RolloutBatch,
};
pub use policy::{
    squash, ActMode, PolicyActor, PolicyInput, PolicyNet, RawAction, StepHeads, StepInfo,
};
pub use trainer::{build_batch, evaluate, evaluation_rollouts, train_online, Agent, OnlineRun};
