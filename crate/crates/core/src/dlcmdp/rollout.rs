use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{resample_latents, sample_session_schedule, Action, DlcmdpSpec, Trajectory};
use crate::belief::PosteriorState;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct EnvStep {
    pub state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// A concrete DLCMDP. The rollout driver owns the session schedule and
/// passes the active context into every `step`.
pub trait Environment: Send {
    fn spec(&self) -> &DlcmdpSpec;

    /// Draws one context from the environment's prior.
    fn sample_latent(&self, rng: &mut dyn RngCore) -> Vec<f64>;

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64>;

    /// Advances one step under context `latent`. Actions arrive sanitized.
    fn step(&mut self, action: &Action, latent: &[f64]) -> Result<EnvStep>;
}

/// Everything an actor may condition on at step `t`.
pub struct Observation<'a> {
    pub t: usize,
    pub state: &'a [f64],
    pub belief: Option<&'a PosteriorState>,
    /// True context; only oracle actors should read it.
    pub latent: &'a [f64],
    pub prev_action: Option<&'a Action>,
    pub prev_reward: f64,
}

pub trait Actor {
    /// Per-step bookkeeping returned alongside the action (log-probs, values).
    type Info;

    fn begin_episode(&mut self) {}

    fn act(&mut self, obs: &Observation<'_>, rng: &mut dyn RngCore)
        -> Result<(Action, Self::Info)>;
}

/// Recurrent belief inference, one transition at a time.
pub trait BeliefEncoder {
    fn initial(&self) -> PosteriorState;

    /// Consumes `(a_{t-1}, r_{t-1}, s_t)`; `prev_action` is the encoded action.
    fn update(
        &self,
        prev: &PosteriorState,
        prev_action: &[f64],
        reward: f64,
        state: &[f64],
    ) -> Result<PosteriorState>;
}

#[derive(Clone, Debug)]
pub struct Rollout<I> {
    pub trajectory: Trajectory,
    /// `beliefs[t]` is the posterior the actor saw at step `t`; the last
    /// entry follows the final transition. Empty without an encoder.
    pub beliefs: Vec<PosteriorState>,
    pub infos: Vec<I>,
}

/// Runs one episode. The schedule and contexts are drawn first from a
/// generator seeded by `seed`, then the environment is reset and stepped;
/// the result is a pure function of `(env, actor, encoder, seed)`.
pub fn rollout_episode<E, A>(
    env: &mut E,
    actor: &mut A,
    encoder: Option<&dyn BeliefEncoder>,
    seed: u64,
) -> Result<Rollout<A::Info>>
where
    E: Environment + ?Sized,
    A: Actor + ?Sized,
{
    let spec = env.spec().clone();
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schedule = sample_session_schedule(spec.horizon, spec.switch_prob, &mut rng)?;
    let latents = resample_latents(
        &schedule,
        |r: &mut ChaCha8Rng| env.sample_latent(r),
        &mut rng,
    );

    let horizon = spec.horizon;
    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut dones = Vec::with_capacity(horizon);
    let mut infos = Vec::with_capacity(horizon);
    let mut beliefs = Vec::new();

    states.push(env.reset(&mut rng));
    actor.begin_episode();
    if let Some(enc) = encoder {
        let zero_action = vec![0.0; spec.action_space.encoded_dim()];
        let b0 = enc.update(&enc.initial(), &zero_action, 0.0, &states[0])?;
        beliefs.push(b0);
    }

    for t in 0..horizon {
        let latent = &latents[schedule.session_ids[t]];
        let obs = Observation {
            t,
            state: &states[t],
            belief: beliefs.get(t),
            latent,
            prev_action: actions.last(),
            prev_reward: rewards.last().copied().unwrap_or(0.0),
        };
        let (raw, info) = actor.act(&obs, &mut rng)?;
        let action = spec.action_space.sanitize(&raw)?;
        let out = env.step(&action, latent)?;
        if let Some(enc) = encoder {
            let enc_action = spec.action_space.encode(&action);
            let b = enc.update(&beliefs[t], &enc_action, out.reward, &out.state)?;
            beliefs.push(b);
        }
        let done = out.done || t + 1 == horizon;
        states.push(out.state);
        actions.push(action);
        rewards.push(out.reward);
        dones.push(done);
        infos.push(info);
        if out.done {
            break;
        }
    }

    let steps = actions.len();
    let mut schedule = schedule;
    if steps < horizon {
        schedule.session_ids.truncate(steps.max(1));
        schedule.switch_flags.truncate(steps.max(1) - 1);
    }
    let latents = latents[..schedule.num_sessions()].to_vec();

    Ok(Rollout {
        trajectory: Trajectory {
            env_name: spec.name.clone(),
            switch_prob: spec.switch_prob,
            seed,
            states,
            actions,
            rewards,
            dones,
            schedule,
            latents,
        },
        beliefs,
        infos,
    })
}
