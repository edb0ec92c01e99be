use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::dlcmdp::{Action, ActionSpace, DlcmdpSpec, EnvStep, Environment};
use crate::error::{Error, Result};

pub const REACHER_DT: f64 = 0.05;
pub const ARENA: f64 = 1.0;

/// Velocity-controlled point mass; returns the clipped next position and
/// the negative distance from it to `target`.
pub fn reacher_step(
    pos: [f64; 2],
    action: [f64; 2],
    target: [f64; 2],
    dt: f64,
) -> Result<([f64; 2], f64)> {
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::invalid("non-finite reacher action"));
    }
    let a = action.map(|v| v.clamp(-1.0, 1.0));
    let next = [
        (pos[0] + dt * a[0]).clamp(-ARENA, ARENA),
        (pos[1] + dt * a[1]).clamp(-ARENA, ARENA),
    ];
    let d = ((next[0] - target[0]).powi(2) + (next[1] - target[1]).powi(2)).sqrt();
    Ok((next, -d))
}

/// Point reacher whose target position is the latent context.
#[derive(Clone, Debug)]
pub struct PointReacherEnv {
    spec: DlcmdpSpec,
    pub dt: f64,
    pos: [f64; 2],
    t: usize,
}

impl PointReacherEnv {
    pub fn new(horizon: usize, switch_prob: f64) -> Self {
        Self {
            spec: DlcmdpSpec {
                name: "point-reacher".into(),
                state_dim: 2,
                action_space: ActionSpace::Continuous {
                    dim: 2,
                    low: -1.0,
                    high: 1.0,
                },
                latent_dim: 2,
                switch_prob,
                horizon,
            },
            dt: REACHER_DT,
            pos: [0.0; 2],
            t: 0,
        }
    }
}

impl Environment for PointReacherEnv {
    fn spec(&self) -> &DlcmdpSpec {
        &self.spec
    }

    /// Standard normal squashed into the arena.
    fn sample_latent(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..2)
            .map(|_| ARENA * rng.sample::<f64, _>(StandardNormal).tanh())
            .collect()
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.pos = [
            rng.random_range(-ARENA..ARENA),
            rng.random_range(-ARENA..ARENA),
        ];
        self.t = 0;
        self.pos.to_vec()
    }

    fn step(&mut self, action: &Action, latent: &[f64]) -> Result<EnvStep> {
        let a = match action {
            Action::Continuous(v) if v.len() == 2 => [v[0], v[1]],
            _ => return Err(Error::invalid("point-reacher takes 2-D continuous actions")),
        };
        let target = [latent[0], latent[1]];
        let (next, reward) = reacher_step(self.pos, a, target, self.dt)?;
        self.pos = next;
        self.t += 1;
        Ok(EnvStep {
            state: next.to_vec(),
            reward,
            done: self.t >= self.spec.horizon,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resting_on_target_scores_zero() {
        let (p, r) = reacher_step([0.3, -0.2], [0.0, 0.0], [0.3, -0.2], REACHER_DT).unwrap();
        assert_eq!(p, [0.3, -0.2]);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn unit_step_reaches_target() {
        let (p, r) = reacher_step([0.0, 0.0], [0.0, 1.0], [0.0, 1.0], 1.0).unwrap();
        assert_eq!(p, [0.0, 1.0]);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn clipping_and_errors() {
        let (p, _) = reacher_step([0.99, 0.0], [5.0, 0.0], [0.0, 0.0], 0.05).unwrap();
        assert_eq!(p[0], 1.0);
        assert!(reacher_step([0.0; 2], [f64::NAN, 0.0], [0.0; 2], 0.05).is_err());
        assert!(reacher_step([0.0; 2], [0.0, f64::INFINITY], [0.0; 2], 0.05).is_err());
    }

    #[test]
    fn rollout_replays_through_step_function() {
        use crate::exec::Exec;
        let trajs =
            crate::experiments::random_episodes("point-reacher", 50, 0.1, 4, 3, Exec::Sequential)
                .unwrap();
        for tr in &trajs {
            for t in 0..tr.len() {
                let a = match &tr.actions[t] {
                    Action::Continuous(v) => [v[0], v[1]],
                    _ => unreachable!(),
                };
                let target = tr.latent_at(t);
                let pos = [tr.states[t][0], tr.states[t][1]];
                let (next, r) = reacher_step(pos, a, [target[0], target[1]], REACHER_DT).unwrap();
                assert_eq!(next.to_vec(), tr.states[t + 1]);
                assert_eq!(r, tr.rewards[t]);
            }
        }
    }
}
