//! Session-aware variational meta-reinforcement learning.
//!
//! Environments whose latent context is resampled at random session
//! boundaries inside an episode, a recurrent belief model that tracks the
//! context and predicts session changes, and the PPO / IQL trainers that
//! consume its beliefs.

pub mod error;
pub mod exec;
pub mod numerics;

pub use error::{Error, Result};
pub mod belief;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod dlcmdp;
pub mod envs;
pub mod experiments;
pub mod iql;
pub mod metrics;
pub mod ppo;
pub mod stats;
