use std::collections::VecDeque;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gae::{compute_gae, normalize_advantages};
use super::loss::{ppo_loss, PpoLossBreakdown, PpoLossConfig, PpoStep, RolloutBatch};
use super::policy::{ActMode, PolicyActor, PolicyInput, PolicyNet, StepInfo};
use crate::belief::{BeliefModel, BeliefTrainer, FrozenEncoder, VaeLossBreakdown};
use crate::config::{Method, TrainConfig};
use crate::dlcmdp::{rollout_episode, BeliefEncoder, DlcmdpSpec, Rollout, Trajectory};
use crate::envs::make_env;
use crate::error::{Error, Result};
use crate::exec::{self, derive_seed, Exec};
use crate::metrics::{MetricsRow, RunSink};
use crate::numerics::{clip_grad_norm, Adam, AdamConfig, ModelParams};

const INIT_STREAM: u64 = 0x1;
const ROLLOUT_STREAM: u64 = 0x2;
const VAE_STREAM: u64 = 0x3;
const PPO_STREAM: u64 = 0x4;
const EVAL_STREAM: u64 = 0x5;

/// Policy plus the belief model it reads, if any.
#[derive(Clone, Debug)]
pub struct Agent {
    pub method: Method,
    pub spec: DlcmdpSpec,
    pub net: PolicyNet,
    pub params: ModelParams,
    pub belief: Option<(BeliefModel, ModelParams)>,
    pub carry_hidden: bool,
}

impl Agent {
    /// Fresh agent for `cfg`; the same seed always gives the same weights.
    pub fn new(cfg: &TrainConfig) -> Result<(Self, Option<BeliefTrainer>)> {
        let cfg = cfg.resolved()?;
        let env = make_env(&cfg.env, cfg.horizon, cfg.switch_prob)?;
        let spec = env.spec().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[INIT_STREAM]));
        let arch = cfg.belief_arch()?;
        let trainer = cfg.method.uses_belief().then(|| {
            BeliefTrainer::new(
                arch.clone(),
                spec.state_dim,
                spec.action_space.clone(),
                cfg.resolved_state_decoder().unwrap_or(false),
                cfg.vae_loss(),
                cfg.vae_lr,
                &mut rng,
            )
        });
        let input = PolicyInput::for_method(cfg.method, cfg.belief_input);
        let context_dim = match input {
            PolicyInput::Belief | PolicyInput::BeliefSample => arch.latent_dim,
            PolicyInput::TrueLatent => spec.latent_dim,
            PolicyInput::StateOnly | PolicyInput::History => 0,
        };
        let net = PolicyNet::new(
            input,
            spec.action_space.clone(),
            spec.state_dim,
            context_dim,
            &cfg.policy_hidden,
        );
        let params = net.init_params(&mut rng);
        let agent = Agent {
            method: cfg.method,
            spec,
            net,
            params,
            belief: trainer
                .as_ref()
                .map(|t| (t.model.clone(), t.params.clone())),
            carry_hidden: cfg.rl2_carry_hidden,
        };
        Ok((agent, trainer))
    }

    /// Replaces the weights with trained ones of the same layout.
    pub fn with_weights(
        mut self,
        policy: ModelParams,
        belief: Option<ModelParams>,
    ) -> Result<Self> {
        let same = |a: &ModelParams, b: &ModelParams| a.slices() == b.slices();
        if !same(&self.params, &policy) {
            return Err(Error::invalid(
                "policy checkpoint does not match the configured network",
            ));
        }
        self.params = policy;
        match (self.belief.as_mut(), belief) {
            (Some((_, cur)), Some(b)) if same(cur, &b) => *cur = b,
            (None, None) => {}
            (Some(_), None) => return Err(Error::invalid("method needs a belief checkpoint")),
            (None, Some(_)) => return Err(Error::invalid("method takes no belief checkpoint")),
            _ => {
                return Err(Error::invalid(
                    "belief checkpoint does not match the configured model",
                ))
            }
        }
        Ok(self)
    }

    /// Runs one episode in a fresh environment instance.
    pub fn rollout(
        &self,
        horizon: usize,
        switch_prob: f64,
        seed: u64,
        mode: ActMode,
    ) -> Result<Rollout<StepInfo>> {
        let mut env = make_env(&self.spec.name, Some(horizon), Some(switch_prob))?;
        let mut actor = PolicyActor::new(&self.net, &self.params, mode, self.carry_hidden)?;
        let enc = self
            .belief
            .as_ref()
            .map(|(model, params)| FrozenEncoder { model, params });
        rollout_episode(
            env.as_mut(),
            &mut actor,
            enc.as_ref().map(|e| e as &dyn BeliefEncoder),
            seed,
        )
    }
}

/// Outcome of [`train_online`].
#[derive(Clone, Debug)]
pub struct OnlineRun {
    pub agent: Agent,
    pub rows: Vec<MetricsRow>,
    /// Largest `|ratio - 1|` seen on the first minibatch of any iteration.
    pub first_minibatch_ratio_deviation: f64,
    /// Trajectories of the last iteration.
    pub last_trajectories: Vec<Trajectory>,
}

/// Advantages and returns per episode, then normalization over the batch.
pub fn build_batch(
    rollouts: &[Rollout<StepInfo>],
    gamma: f64,
    lambda: f64,
) -> Result<RolloutBatch> {
    let mut episodes = Vec::with_capacity(rollouts.len());
    for r in rollouts {
        let tr = &r.trajectory;
        let mut values: Vec<f64> = r.infos.iter().map(|i| i.value).collect();
        // Episodes end at the horizon, so nothing is bootstrapped past it.
        values.push(0.0);
        let (adv, ret) = compute_gae(&tr.rewards, &values, &tr.dones, gamma, lambda)?;
        if adv.iter().any(|a| !a.is_finite()) {
            return Err(Error::Divergence {
                stage: "gae",
                iteration: 0,
                detail: "non-finite advantage".into(),
            });
        }
        let steps = (0..tr.len())
            .map(|t| PpoStep {
                state: tr.states[t].clone(),
                belief: r.beliefs.get(t).map(|b| b.features()).unwrap_or_default(),
                features: r.infos[t].features.clone(),
                action: r.infos[t].raw.clone(),
                log_prob: r.infos[t].log_prob,
                reward: tr.rewards[t],
                value: r.infos[t].value,
                done: tr.dones[t],
                session_id: tr.schedule.session_ids[t],
                advantage: adv[t],
                ret: ret[t],
            })
            .collect();
        episodes.push(steps);
    }
    let mut batch = RolloutBatch { episodes };
    let raw: Vec<f64> = batch.steps().map(|s| s.advantage).collect();
    let mut norm = normalize_advantages(&raw).into_iter();
    for s in batch.episodes.iter_mut().flatten() {
        s.advantage = norm.next().expect("one normalized value per step");
    }
    Ok(batch)
}

/// Online training: parallel rollouts with frozen parameter snapshots,
/// one belief-model update phase, then PPO epochs over episode
/// minibatches. Deterministic for a given seed and worker count.
pub fn train_online(
    cfg: &TrainConfig,
    exec: Exec,
    sink: &mut dyn RunSink<MetricsRow>,
) -> Result<OnlineRun> {
    let cfg = cfg.resolved()?;
    let (mut agent, mut belief) = Agent::new(&cfg)?;
    let horizon = cfg.resolved_horizon()?;
    let p = cfg.resolved_switch_prob()?;
    let workers = cfg.resolved_workers()?;
    let steps_per_iter = (workers * horizon) as u64;
    let iterations = cfg.total_steps.div_ceil(steps_per_iter).max(1) as usize;
    let loss_cfg = PpoLossConfig {
        clip_eps: cfg.clip_eps,
        value_loss_coef: cfg.value_loss_coef,
        entropy_coef: cfg.resolved_entropy_coef()?,
        carry_hidden: cfg.rl2_carry_hidden,
    };
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.policy_lr,
            ..Default::default()
        },
        agent.params.len(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[PPO_STREAM]));
    let mut buffer: VecDeque<Trajectory> =
        VecDeque::with_capacity(cfg.vae_buffer_episodes + workers);
    let mut rows = Vec::with_capacity(iterations);
    let mut env_steps = 0u64;
    let mut ratio_dev = 0.0f64;
    let mut last = Vec::new();
    let start = Instant::now();

    for it in 0..iterations {
        let result = (|| -> Result<MetricsRow> {
            let snapshot = &agent;
            let rollouts: Vec<Rollout<StepInfo>> = exec::map_indexed(exec, workers, |w| {
                snapshot.rollout(
                    horizon,
                    p,
                    derive_seed(cfg.seed, &[ROLLOUT_STREAM, it as u64, w as u64]),
                    ActMode::Sample,
                )
            })
            .into_iter()
            .collect::<Result<_>>()?;
            let n_steps: usize = rollouts.iter().map(|r| r.trajectory.len()).sum();
            env_steps += n_steps as u64;
            let mean_return = rollouts
                .iter()
                .map(|r| r.trajectory.total_reward())
                .sum::<f64>()
                / rollouts.len() as f64;

            let mut vae = VaeLossBreakdown::default();
            if let Some(bt) = belief.as_mut() {
                for r in &rollouts {
                    buffer.push_back(r.trajectory.clone());
                }
                while buffer.len() > cfg.vae_buffer_episodes.max(1) {
                    buffer.pop_front();
                }
                let updates = cfg.vae_updates_per_iter;
                for u in 0..updates {
                    let k = cfg.vae_batch_episodes.min(buffer.len()).max(1);
                    let idx = rand::seq::index::sample(&mut rng, buffer.len(), k);
                    let batch: Vec<Trajectory> = idx.iter().map(|i| buffer[i].clone()).collect();
                    let l = bt.update(
                        exec,
                        &batch,
                        it,
                        derive_seed(cfg.seed, &[VAE_STREAM, it as u64, u as u64]),
                    )?;
                    vae.recon_reward += l.recon_reward / updates as f64;
                    vae.recon_state += l.recon_state / updates as f64;
                    vae.kl += l.kl / updates as f64;
                    vae.consistency += l.consistency / updates as f64;
                    vae.termination += l.termination / updates as f64;
                }
            }

            let batch = build_batch(&rollouts, cfg.gamma, cfg.gae_lambda)?;
            let mut order: Vec<usize> = (0..batch.episodes.len()).collect();
            let per_mb = order.len().div_ceil(cfg.ppo_minibatches).max(1);
            let mut sums = PpoLossBreakdown::default();
            let mut norm_sum = 0.0;
            let mut updates = 0usize;
            for epoch in 0..cfg.ppo_epochs {
                order.shuffle(&mut rng);
                for (mb, chunk) in order.chunks(per_mb).enumerate() {
                    let eps: Vec<&[PpoStep]> = chunk
                        .iter()
                        .map(|&i| batch.episodes[i].as_slice())
                        .collect();
                    let (l, mut grad) = ppo_loss(exec, &agent.params, &agent.net, &eps, &loss_cfg)?;
                    if epoch == 0 && mb == 0 {
                        ratio_dev = ratio_dev.max(l.max_ratio_deviation);
                    }
                    norm_sum += clip_grad_norm(&mut grad, cfg.max_grad_norm);
                    adam.step(agent.params.as_mut_slice(), &grad);
                    sums.policy_loss += l.policy_loss;
                    sums.value_loss += l.value_loss;
                    sums.entropy += l.entropy;
                    updates += 1;
                }
            }
            if agent.params.as_slice().iter().any(|x| !x.is_finite()) {
                return Err(Error::Divergence {
                    stage: "ppo_update",
                    iteration: it,
                    detail: "non-finite policy parameters".into(),
                });
            }
            if let Some(bt) = belief.as_ref() {
                agent.belief = Some((bt.model.clone(), bt.params.clone()));
            }
            let u = updates as f64;
            last = rollouts.into_iter().map(|r| r.trajectory).collect();
            Ok(MetricsRow {
                iteration: it,
                env_steps,
                mean_return,
                recon_reward: vae.recon_reward,
                recon_state: vae.recon_state,
                kl: vae.kl,
                consistency: vae.consistency,
                termination: vae.termination,
                policy_loss: sums.policy_loss / u,
                value_loss: sums.value_loss / u,
                entropy: sums.entropy / u,
                grad_norm: norm_sum / u,
                wall_clock_s: cfg.record_wall_clock.then(|| start.elapsed().as_secs_f64()),
            })
        })();
        let row = match result {
            Ok(row) => row,
            Err(e) => {
                sink.checkpoint("diverged-policy", &agent.params, it as u64)?;
                if let Some(bt) = belief.as_ref() {
                    sink.checkpoint("diverged-belief", &bt.params, it as u64)?;
                }
                return Err(match e {
                    Error::Divergence { stage, detail, .. } => Error::Divergence {
                        stage,
                        iteration: it,
                        detail,
                    },
                    other => other,
                });
            }
        };
        sink.row(&row)?;
        rows.push(row);
    }
    sink.checkpoint("policy", &agent.params, env_steps)?;
    if let Some(bt) = belief.as_ref() {
        sink.checkpoint("belief", &bt.params, env_steps)?;
    }
    Ok(OnlineRun {
        agent,
        rows,
        first_minibatch_ratio_deviation: ratio_dev,
        last_trajectories: last,
    })
}

/// Episode returns of `agent` over `episodes` held-out seeds.
pub fn evaluate(
    agent: &Agent,
    horizon: usize,
    switch_prob: f64,
    episodes: usize,
    seed: u64,
    mode: ActMode,
    exec: Exec,
) -> Result<Vec<f64>> {
    exec::map_indexed(exec, episodes, |i| {
        agent
            .rollout(
                horizon,
                switch_prob,
                derive_seed(seed, &[EVAL_STREAM, i as u64]),
                mode,
            )
            .map(|r| r.trajectory.total_reward())
    })
    .into_iter()
    .collect()
}

/// Rollouts (with beliefs) on held-out seeds.
pub fn evaluation_rollouts(
    agent: &Agent,
    horizon: usize,
    switch_prob: f64,
    episodes: usize,
    seed: u64,
    exec: Exec,
) -> Result<Vec<Rollout<StepInfo>>> {
    exec::map_indexed(exec, episodes, |i| {
        agent.rollout(
            horizon,
            switch_prob,
            derive_seed(seed, &[EVAL_STREAM, i as u64]),
            ActMode::Sample,
        )
    })
    .into_iter()
    .collect()
}
