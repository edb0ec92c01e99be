//! Desk-scale comparative experiments: method ordering, session detection,
//! transition-decoder discrimination and offline IQL against behavior
//! cloning.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::belief::{encode_trajectory, BeliefTrainer};
use crate::config::{Method, TrainConfig};
use crate::dlcmdp::{rollout_episode, Action, ActionSpace, Actor, Observation, Trajectory};
use crate::envs::make_env;
use crate::error::{ensure, Result};
use crate::exec::{self, derive_seed, Exec};
use crate::iql::{
    collect_offline_dataset, evaluate_offline, train_iql, train_offline, IqlConfig, IqlNets,
    OfflineDataset, Transitions,
};
use crate::metrics::MemorySink;
use crate::numerics::{Activation, Adam, AdamConfig, Mlp, ParamsBuilder, Tape};
use crate::ppo::{evaluate, train_online, ActMode, Agent};
use crate::stats::{mann_whitney, mean, roc_auc, std_dev};

const DATA_STREAM: u64 = 0x50;
const HELD_OUT_STREAM: u64 = 0x51;
const BLIND_STREAM: u64 = 0x52;

/// Mean evaluation return of every seed of one method.
#[derive(Clone, Debug)]
pub struct MethodResult {
    pub method: Method,
    pub seed_returns: Vec<f64>,
}

impl MethodResult {
    pub fn mean(&self) -> f64 {
        mean(&self.seed_returns)
    }

    /// Standard error of the mean over seeds.
    pub fn sem(&self) -> f64 {
        std_dev(&self.seed_returns) / (self.seed_returns.len() as f64).sqrt()
    }
}

/// Trained agents are returned alongside the results so callers can probe
/// them further.
pub struct OrderingRun {
    pub results: Vec<MethodResult>,
    pub agents: Vec<(Method, u64, Agent)>,
}

/// Trains every method in `methods` on `seeds` with `base` and evaluates
/// each run on `base.eval_episodes` held-out episodes.
pub fn ordering_experiment(
    base: &TrainConfig,
    methods: &[Method],
    seeds: &[u64],
    exec: Exec,
    mut progress: impl FnMut(Method, u64, f64),
) -> Result<OrderingRun> {
    let base = base.resolved()?;
    let horizon = base.resolved_horizon()?;
    let p = base.resolved_switch_prob()?;
    let mut results = Vec::new();
    let mut agents = Vec::new();
    for &method in methods {
        let mut seed_returns = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let cfg = TrainConfig {
                method,
                seed,
                ..base.clone()
            };
            let run = train_online(&cfg, exec, &mut MemorySink::default())?;
            let r = mean(&evaluate(
                &run.agent,
                horizon,
                p,
                base.eval_episodes,
                seed,
                ActMode::Sample,
                exec,
            )?);
            progress(method, seed, r);
            seed_returns.push(r);
            agents.push((method, seed, run.agent));
        }
        results.push(MethodResult {
            method,
            seed_returns,
        });
    }
    Ok(OrderingRun { results, agents })
}

/// One-sided Mann-Whitney p-value that `a` tends to exceed `b`.
pub fn significance(a: &MethodResult, b: &MethodResult) -> Result<f64> {
    Ok(mann_whitney(&a.seed_returns, &b.seed_returns)?.p_greater)
}

/// ROC AUC of the termination probability against the true switch flags on
/// `episodes` held-out rollouts of a belief-conditioned agent. Flag `t` is
/// scored by the belief formed after observing `s_{t+1}`.
pub fn termination_auc(
    agent: &Agent,
    horizon: usize,
    switch_prob: f64,
    episodes: usize,
    seed: u64,
    exec: Exec,
) -> Result<f64> {
    let (model, params) = agent
        .belief
        .as_ref()
        .ok_or_else(|| crate::error::Error::invalid("agent has no belief model"))?;
    let per_episode: Vec<Result<(Vec<f64>, Vec<bool>)>> = exec::map_indexed(exec, episodes, |i| {
        let r = agent.rollout(
            horizon,
            switch_prob,
            derive_seed(seed, &[HELD_OUT_STREAM, i as u64]),
            ActMode::Sample,
        )?;
        let q = encode_trajectory(params, model, &r.trajectory, &agent.spec.action_space)?;
        let flags = r.trajectory.schedule.switch_flags.clone();
        let scores = (0..flags.len()).map(|t| q[t + 2].term_logit).collect();
        Ok((scores, flags))
    });
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for e in per_episode {
        let (s, l) = e?;
        scores.extend(s);
        labels.extend(l);
    }
    roc_auc(&scores, &labels)
}

/// Uniform random actions.
struct RandomActor {
    space: ActionSpace,
}

impl Actor for RandomActor {
    type Info = ();

    fn act(&mut self, _obs: &Observation<'_>, rng: &mut dyn rand::RngCore) -> Result<(Action, ())> {
        Ok((
            match &self.space {
                ActionSpace::Discrete { n } => Action::Discrete(rng.random_range(0..*n)),
                ActionSpace::Continuous { dim, low, high } => {
                    Action::Continuous((0..*dim).map(|_| rng.random_range(*low..*high)).collect())
                }
            },
            (),
        ))
    }
}

/// Episodes of a uniform random policy.
pub fn random_episodes(
    env: &str,
    horizon: usize,
    switch_prob: f64,
    n: usize,
    seed: u64,
    exec: Exec,
) -> Result<Vec<Trajectory>> {
    exec::map_indexed(exec, n, |i| {
        let mut e = make_env(env, Some(horizon), Some(switch_prob))?;
        let mut actor = RandomActor {
            space: e.spec().action_space.clone(),
        };
        rollout_episode(
            e.as_mut(),
            &mut actor,
            None,
            derive_seed(seed, &[DATA_STREAM, i as u64]),
        )
        .map(|r| r.trajectory)
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderComparison {
    /// Next-state MSE of the belief model's state decoder given the
    /// posterior mean formed after observing `s_t`.
    pub conditioned_mse: f64,
    /// Next-state MSE of a decoder of the same shape that sees only `(s, a)`.
    pub blind_mse: f64,
}

/// Trains a belief model with a state decoder on random-policy episodes and
/// a latent-free decoder of the same shape on the same transitions, then
/// compares their next-state errors on held-out episodes.
pub fn decoder_discrimination(
    cfg: &TrainConfig,
    train_episodes: usize,
    test_episodes: usize,
    updates: usize,
    exec: Exec,
) -> Result<DecoderComparison> {
    let cfg = cfg.resolved()?;
    ensure(cfg.resolved_state_decoder()?, || {
        format!("{} has no state decoder", cfg.env)
    })?;
    let horizon = cfg.resolved_horizon()?;
    let p = cfg.resolved_switch_prob()?;
    let train = random_episodes(&cfg.env, horizon, p, train_episodes, cfg.seed, exec)?;
    let test = random_episodes(
        &cfg.env,
        horizon,
        p,
        test_episodes,
        derive_seed(cfg.seed, &[HELD_OUT_STREAM]),
        exec,
    )?;
    let spec = make_env(&cfg.env, Some(horizon), Some(p))?.spec().clone();
    let space = spec.action_space.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[DATA_STREAM]));

    let mut bt = BeliefTrainer::new(
        cfg.belief_arch()?,
        spec.state_dim,
        space.clone(),
        true,
        cfg.vae_loss(),
        cfg.vae_lr,
        &mut rng,
    );
    let k = cfg.vae_batch_episodes.clamp(1, train.len());
    for u in 0..updates {
        let idx = rand::seq::index::sample(&mut rng, train.len(), k);
        let batch: Vec<Trajectory> = idx.iter().map(|i| train[i].clone()).collect();
        bt.update(
            exec,
            &batch,
            u,
            derive_seed(cfg.seed, &[DATA_STREAM, u as u64]),
        )?;
    }
    let errs: Vec<Result<(f64, usize)>> = exec::map_slice(exec, &test, |tr| {
        let q = encode_trajectory(&bt.params, &bt.model, tr, &space)?;
        let mut sse = 0.0;
        for t in 0..tr.len() {
            let pred = crate::belief::decode_state(
                &bt.params,
                &bt.model,
                &q[t].mu,
                &tr.states[t],
                &space.encode(&tr.actions[t]),
            )?
            .expect("model has a state decoder");
            sse += pred
                .iter()
                .zip(&tr.states[t + 1])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>();
        }
        Ok((sse, tr.len() * spec.state_dim))
    });
    let (mut sse, mut n) = (0.0, 0usize);
    for e in errs {
        let (s, c) = e?;
        sse += s;
        n += c;
    }
    let conditioned_mse = sse / n as f64;

    // Latent-free decoder: `s + f(s, a)` with the decoder's hidden sizes,
    // fitted by minibatch Adam on every training transition.
    let a_dim = space.encoded_dim();
    let mut b = ParamsBuilder::new();
    let mut sizes = vec![spec.state_dim + a_dim];
    sizes.extend(&cfg.decoder_hidden);
    sizes.push(spec.state_dim);
    let mlp = Mlp::new(&mut b, "blind_decoder", &sizes, Activation::Relu);
    let mut brng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[BLIND_STREAM]));
    let mut params = b.build(&mut brng)?;
    let inputs = |tr: &Trajectory, t: usize| {
        let mut x = tr.states[t].clone();
        x.extend(space.encode(&tr.actions[t]));
        x
    };
    let pairs: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = train
        .iter()
        .flat_map(|tr| (0..tr.len()).map(move |t| (tr, t)))
        .map(|(tr, t)| {
            (
                inputs(tr, t),
                tr.states[t].clone(),
                tr.states[t + 1].clone(),
            )
        })
        .collect();
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.vae_lr,
            ..Default::default()
        },
        params.len(),
    );
    let batch = 256.min(pairs.len());
    let blind_updates = updates.max(1) * 4;
    for _ in 0..blind_updates {
        let mut grad = vec![0.0; params.len()];
        for _ in 0..batch {
            let (x, s, s1) = &pairs[brng.random_range(0..pairs.len())];
            let mut tape = Tape::new(params.as_slice());
            let xv = tape.constant(x);
            let delta = mlp.forward(&mut tape, xv);
            let sv = tape.constant(s);
            let pred = tape.add(sv, delta);
            let target = tape.constant(s1);
            let e = tape.sub(pred, target);
            let e2 = tape.square(e);
            let l = tape.sum(e2);
            tape.backward_scaled(l, 1.0 / batch as f64, &mut grad);
        }
        adam.step(params.as_mut_slice(), &grad);
    }
    let (mut bse, mut bn) = (0.0, 0usize);
    for tr in &test {
        for t in 0..tr.len() {
            let d = crate::numerics::mlp_forward(&params, &mlp, &inputs(tr, t))?;
            bse += d
                .iter()
                .zip(&tr.states[t])
                .zip(&tr.states[t + 1])
                .map(|((d, s), s1)| (s + d - s1).powi(2))
                .sum::<f64>();
            bn += spec.state_dim;
        }
    }
    Ok(DecoderComparison {
        conditioned_mse,
        blind_mse: bse / bn as f64,
    })
}

/// Offline returns per seed for IQL (`cfg.awr_beta`) and its unweighted
/// ablation, all trained on one oracle dataset.
#[derive(Clone, Debug)]
pub struct OfflineComparison {
    pub dataset_return: f64,
    pub iql: Vec<f64>,
    pub bc: Vec<f64>,
}

/// Trains an oracle online, collects `cfg.dataset_transitions` transitions
/// with it, then trains IQL and behavior cloning on `seeds`.
pub fn offline_comparison(
    cfg: &TrainConfig,
    seeds: &[u64],
    exec: Exec,
) -> Result<OfflineComparison> {
    let cfg = cfg.resolved()?;
    let horizon = cfg.resolved_horizon()?;
    let p = cfg.resolved_switch_prob()?;
    let oracle_cfg = TrainConfig {
        method: Method::Oracle,
        ..cfg.clone()
    };
    let oracle = train_online(&oracle_cfg, exec, &mut MemorySink::default())?;
    let ds: OfflineDataset = collect_offline_dataset(
        &oracle.agent,
        horizon,
        p,
        cfg.dataset_transitions,
        cfg.seed,
        cfg.oracle_return_threshold,
        None,
        exec,
    )?;
    let mut iql = Vec::new();
    let mut bc = Vec::new();
    for &seed in seeds {
        for (beta, out) in [(cfg.awr_beta, &mut iql), (0.0, &mut bc)] {
            let c = TrainConfig {
                awr_beta: beta,
                ..cfg.clone()
            };
            let run = train_offline(&ds, &c, seed, exec, &mut MemorySink::default())?;
            let r = evaluate_offline(
                &run,
                &cfg.env,
                horizon,
                p,
                cfg.eval_episodes,
                seed,
                ActMode::Greedy,
                exec,
            )?;
            out.push(mean(&r));
        }
    }
    Ok(OfflineComparison {
        dataset_return: ds.manifest.mean_episode_return,
        iql,
        bc,
    })
}

/// Next state and reward of the two-state chain: action 0 stays, action 1
/// moves to the other state, and arriving in (or staying in) state 1 pays 1.
pub fn two_state_step(state: usize, action: usize) -> (usize, f64) {
    let next = if action == 0 { state } else { 1 - state };
    (next, if next == 1 { 1.0 } else { 0.0 })
}

/// Every (state, action) pair of the two-state chain `copies` times, with
/// one-hot state features and no terminal steps.
pub fn two_state_transitions(copies: usize) -> Transitions {
    let one_hot = |s: usize| {
        if s == 0 {
            vec![1.0, 0.0]
        } else {
            vec![0.0, 1.0]
        }
    };
    let mut t = Transitions::default();
    for _ in 0..copies {
        for s in 0..2 {
            for a in 0..2 {
                let (next, r) = two_state_step(s, a);
                t.features.push(one_hot(s));
                t.actions.push(Action::Discrete(a));
                t.rewards.push(r);
                t.next_features.push(one_hot(next));
                t.dones.push(false);
            }
        }
    }
    t
}

/// Learned `V(0), V(1)` of IQL on the two-state chain.
pub fn two_state_iql(cfg: &IqlConfig, seed: u64, exec: Exec) -> Result<[f64; 2]> {
    let data = two_state_transitions(4);
    let nets = IqlNets::new(ActionSpace::Discrete { n: 2 }, 2, &cfg.hidden);
    let p = train_iql(&data, &nets, cfg, seed, exec, &mut MemorySink::default())?;
    Ok([
        nets.value_of(&p.value, &[1.0, 0.0]),
        nets.value_of(&p.value, &[0.0, 1.0]),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tabular(tau: f64, beta: f64) -> IqlConfig {
        IqlConfig {
            expectile_tau: tau,
            awr_beta: beta,
            awr_weight_max: 100.0,
            gradient_steps: 20_000,
            batch_size: 64,
            actor_lr: 1e-2,
            critic_lr: 1e-2,
            hidden: vec![],
            target_update_rate: 0.005,
            gamma: 0.9,
            log_every: 5_000,
        }
    }

    // Optimal value is 10 in both states; the uniform behaviour policy is
    // worth 5. The expectile of {5 +- 5} at tau is 10 * tau.
    #[test]
    fn tabular_values_follow_the_expectile() {
        let mut last = f64::NEG_INFINITY;
        for (tau, want) in [(0.5, 5.0), (0.7, 7.0), (0.9, 9.0), (0.99, 9.9)] {
            let v = two_state_iql(&tabular(tau, 1e-6), 0, Exec::Sequential).unwrap();
            for x in v {
                assert!((x - want).abs() < 0.02 * want, "tau {tau}: {v:?} vs {want}");
            }
            assert!(v[0] > last);
            last = v[0];
        }
    }

    #[test]
    fn random_episodes_are_seeded() {
        let a = random_episodes("gridworld", 20, 0.1, 3, 5, Exec::Sequential).unwrap();
        let b = random_episodes("gridworld", 20, 0.1, 3, 5, Exec::Parallel).unwrap();
        let c = random_episodes("gridworld", 20, 0.1, 3, 6, Exec::Sequential).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn method_result_summaries() {
        let r = MethodResult {
            method: Method::Blind,
            seed_returns: vec![1.0, 2.0, 3.0, 4.0],
        };
        assert_eq!(r.mean(), 2.5);
        assert!((r.sem() - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
    }
}
