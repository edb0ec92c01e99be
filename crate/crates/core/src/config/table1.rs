//! Published training hyperparameters, one column per benchmark.
//!
//! `point-reacher` takes the Reacher column and `windy-chain` the
//! HalfCheetah column. ScratchItch has no environment here but its column
//! is kept so the full table stays checkable.

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Column {
    pub name: &'static str,
    pub horizon: usize,
    pub switch_prob: f64,
    pub n_workers: usize,
    pub value_loss_coef: f64,
    pub entropy_coef: f64,
    pub learning_rate: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub max_grad_norm: f64,
    pub clip_eps: f64,
    pub latent_dim: usize,
    pub policy_lr: f64,
    pub vae_lr: f64,
    pub embed_size: usize,
    pub consistency_weight: f64,
    pub kl_weight: f64,
}

const SHARED: Column = Column {
    name: "",
    horizon: 0,
    switch_prob: 0.0,
    n_workers: 0,
    value_loss_coef: 0.5,
    entropy_coef: 0.0,
    learning_rate: 3e-4,
    gamma: 0.99,
    gae_lambda: 0.95,
    max_grad_norm: 0.5,
    clip_eps: 0.2,
    latent_dim: 0,
    policy_lr: 3e-4,
    vae_lr: 3e-4,
    embed_size: 0,
    consistency_weight: 0.5,
    kl_weight: 0.01,
};

pub const GRIDWORLD: Column = Column {
    name: "Gridworld",
    horizon: 60,
    switch_prob: 0.07,
    n_workers: 16,
    entropy_coef: 0.01,
    latent_dim: 5,
    embed_size: 8,
    ..SHARED
};

pub const REACHER: Column = Column {
    name: "Reacher",
    horizon: 400,
    switch_prob: 0.01,
    n_workers: 2048,
    entropy_coef: 0.05,
    latent_dim: 16,
    embed_size: 32,
    ..SHARED
};

pub const HALF_CHEETAH: Column = Column {
    name: "HalfCheetah",
    horizon: 400,
    switch_prob: 0.01,
    n_workers: 2048,
    entropy_coef: 0.05,
    latent_dim: 16,
    embed_size: 32,
    ..SHARED
};

pub const SCRATCH_ITCH: Column = Column {
    name: "ScratchItch",
    horizon: 200,
    switch_prob: 0.02,
    n_workers: 32,
    entropy_coef: 0.1,
    latent_dim: 16,
    embed_size: 32,
    ..SHARED
};

pub const ALL: [&Column; 4] = [&GRIDWORLD, &REACHER, &HALF_CHEETAH, &SCRATCH_ITCH];

/// IQL constants used by the offline path.
pub const IQL_EXPECTILE: f64 = 0.9;
pub const IQL_AWR_BETA: f64 = 10.0;
pub const IQL_FULL_GRADIENT_STEPS: usize = 25_000;
pub const IQL_EVAL_SEEDS: usize = 5;
