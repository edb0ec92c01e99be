use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::dlcmdp::{Action, ActionSpace, DlcmdpSpec, EnvStep, Environment};
use crate::error::{Error, Result};

pub const WINDY_DT: f64 = 0.05;
pub const WIND_STRENGTH: f64 = 0.5;
pub const VELOCITY_LIMIT: f64 = 2.0;
pub const TARGET_VELOCITY_BOUND: f64 = 1.0;

/// Semi-implicit Euler step of a 1-D point mass pushed by `action + wind`.
/// State is `(position, velocity)`; the reward tracks `target_vel`.
pub fn windy_step(state: [f64; 2], action: f64, wind: f64, target_vel: f64) -> ([f64; 2], f64) {
    let [pos, vel] = state;
    let vel_next = (vel + WINDY_DT * (action + wind)).clamp(-VELOCITY_LIMIT, VELOCITY_LIMIT);
    let pos_next = pos + WINDY_DT * vel_next;
    ([pos_next, vel_next], -(vel_next - target_vel).abs())
}

/// 1-D chain with a latent wind (enters the transition) and a latent
/// target velocity (enters the reward). Context is `[wind, target_vel]`.
#[derive(Clone, Debug)]
pub struct WindyChainEnv {
    spec: DlcmdpSpec,
    state: [f64; 2],
    t: usize,
}

impl WindyChainEnv {
    pub fn new(horizon: usize, switch_prob: f64) -> Self {
        Self {
            spec: DlcmdpSpec {
                name: "windy-chain".into(),
                state_dim: 2,
                action_space: ActionSpace::Continuous {
                    dim: 1,
                    low: -1.0,
                    high: 1.0,
                },
                latent_dim: 2,
                switch_prob,
                horizon,
            },
            state: [0.0; 2],
            t: 0,
        }
    }
}

impl Environment for WindyChainEnv {
    fn spec(&self) -> &DlcmdpSpec {
        &self.spec
    }

    fn sample_latent(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let wind = if rng.random::<bool>() {
            WIND_STRENGTH
        } else {
            -WIND_STRENGTH
        };
        let target = TARGET_VELOCITY_BOUND * rng.sample::<f64, _>(StandardNormal).tanh();
        vec![wind, target]
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.state = [rng.random_range(-1.0..1.0), 0.0];
        self.t = 0;
        self.state.to_vec()
    }

    fn step(&mut self, action: &Action, latent: &[f64]) -> Result<EnvStep> {
        let a = match action {
            Action::Continuous(v) if v.len() == 1 => v[0],
            _ => return Err(Error::invalid("windy-chain takes 1-D continuous actions")),
        };
        let (next, reward) = windy_step(self.state, a, latent[0], latent[1]);
        self.state = next;
        self.t += 1;
        Ok(EnvStep {
            state: next.to_vec(),
            reward,
            done: self.t >= self.spec.horizon,
        })
    }
}
