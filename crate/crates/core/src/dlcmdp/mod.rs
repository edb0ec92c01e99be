//! The latent-context generative process: spaces, session schedules,
//! trajectories, episode rollout and the JSON-Lines trajectory format.

mod jsonl;
mod rollout;
mod schedule;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use jsonl::{
    read_trajectories, trajectory_to_jsonl, write_trajectories, EpisodeHeader, StepRecord,
};
pub use rollout::{
    rollout_episode, Actor, BeliefEncoder, EnvStep, Environment, Observation, Rollout,
};
pub use schedule::{resample_latents, sample_session_schedule, SessionSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ActionSpace {
    Discrete { n: usize },
    Continuous { dim: usize, low: f64, high: f64 },
}

impl ActionSpace {
    /// Width of the vector encoding of an action (one-hot for discrete).
    pub fn encoded_dim(&self) -> usize {
        match self {
            ActionSpace::Discrete { n } => *n,
            ActionSpace::Continuous { dim, .. } => *dim,
        }
    }

    /// Clips continuous actions into bounds; rejects discrete actions out of
    /// range and anything non-finite.
    pub fn sanitize(&self, action: &Action) -> Result<Action> {
        match (self, action) {
            (ActionSpace::Discrete { n }, Action::Discrete(a)) => {
                if a < n {
                    Ok(action.clone())
                } else {
                    Err(Error::invalid(format!(
                        "discrete action {a} outside 0..{n}"
                    )))
                }
            }
            (ActionSpace::Continuous { dim, low, high }, Action::Continuous(v)) => {
                if v.len() != *dim {
                    return Err(Error::invalid(format!(
                        "action has {} components, expected {dim}",
                        v.len()
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::invalid("non-finite continuous action"));
                }
                Ok(Action::Continuous(
                    v.iter().map(|x| x.clamp(*low, *high)).collect(),
                ))
            }
            _ => Err(Error::invalid(
                "action kind does not match the action space",
            )),
        }
    }

    pub fn encode(&self, action: &Action) -> Vec<f64> {
        match (self, action) {
            (ActionSpace::Discrete { n }, Action::Discrete(a)) => {
                let mut v = vec![0.0; *n];
                if *a < *n {
                    v[*a] = 1.0;
                }
                v
            }
            (_, Action::Continuous(v)) => v.clone(),
            (ActionSpace::Continuous { dim, .. }, Action::Discrete(_)) => vec![0.0; *dim],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

/// Environment plus session-process description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DlcmdpSpec {
    pub name: String,
    pub state_dim: usize,
    pub action_space: ActionSpace,
    /// Dimension of the true context vector the environment consumes.
    pub latent_dim: usize,
    pub switch_prob: f64,
    pub horizon: usize,
}

impl DlcmdpSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.switch_prob) {
            return Err(Error::invalid(format!(
                "switch_prob {} outside [0, 1]",
                self.switch_prob
            )));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        if self.latent_dim == 0 {
            return Err(Error::invalid("latent_dim must be at least 1"));
        }
        Ok(())
    }
}

/// One episode. `states` has `horizon + 1` entries, per-step vectors have
/// `horizon`, and `latents` holds one context per session.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub env_name: String,
    pub switch_prob: f64,
    pub seed: u64,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub schedule: SessionSchedule,
    pub latents: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Context in force at step `t`.
    pub fn latent_at(&self, t: usize) -> &[f64] {
        &self.latents[self.schedule.session_ids[t]]
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn check(&self) -> Result<()> {
        let t = self.actions.len();
        let ok = self.states.len() == t + 1
            && self.rewards.len() == t
            && self.dones.len() == t
            && self.schedule.session_ids.len() >= t
            && self.latents.len() == self.schedule.num_sessions();
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("trajectory lengths are inconsistent"))
        }
    }
}
