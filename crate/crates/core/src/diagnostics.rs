//! Finite-difference verification of every trained loss on live rollouts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::belief::{vae_term_grad, VaeTerm};
use crate::config::{Method, TrainConfig};
use crate::error::Result;
use crate::exec::{derive_seed, Exec};
use crate::iql::{
    actor_loss_grad, dataset_transitions, q_loss_grad, value_loss_grad, IqlConfig, IqlNets,
    IqlParams,
};
use crate::numerics::{grad_check_sweep, GradCheckReport, ModelParams};
use crate::ppo::{build_batch, ppo_loss, ActMode, Agent, PpoLossConfig};

/// Central-difference steps tried on every probed coordinate.
pub const SUITE_STEPS: [f64; 6] = [1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2];
/// Tolerance on the maximum relative error.
pub const SUITE_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct LossCheck {
    pub loss: String,
    pub report: GradCheckReport,
}

impl LossCheck {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < SUITE_TOLERANCE
    }
}

fn with_data(params: &ModelParams, data: &[f64]) -> ModelParams {
    let mut p = params.clone();
    p.as_mut_slice().copy_from_slice(data);
    p
}

fn jitter(params: &mut ModelParams, scale: f64, rng: &mut ChaCha8Rng) {
    let n = Normal::new(0.0, scale).expect("positive scale");
    params
        .as_mut_slice()
        .iter_mut()
        .for_each(|x| *x += n.sample(rng));
}

/// Checks the variational objective (total and every term), the PPO loss of
/// a belief-conditioned and a recurrent policy, and the three IQL losses,
/// each on `probes` random coordinates.
pub fn gradient_suite(env: &str, seed: u64, probes: usize) -> Result<Vec<LossCheck>> {
    let exec = Exec::Sequential;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x40]));
    let mut out = Vec::new();
    let base = TrainConfig {
        env: env.to_string(),
        seed,
        ..TrainConfig::default()
    }
    .resolved()?;
    let horizon = base.resolved_horizon()?.min(40);
    let p = base.resolved_switch_prob()?.max(0.1);

    // Belief model on a rollout with several sessions.
    let (agent, trainer) = Agent::new(&base)?;
    let mut bt = trainer.expect("default method uses a belief model");
    // Zero biases meet zero inputs at the first step, exactly on a ReLU
    // kink; the check runs at a generic nearby point instead.
    jitter(&mut bt.params, 0.02, &mut rng);
    let traj = agent
        .rollout(horizon, p, derive_seed(seed, &[0x41]), ActMode::Sample)?
        .trajectory;
    let mut loss_cfg = bt.loss.clone();
    loss_cfg.recon_anchors = 4;
    for term in VaeTerm::ALL {
        if term == VaeTerm::ReconState && !bt.model.has_state_decoder() {
            continue;
        }
        let f = |x: &[f64]| {
            vae_term_grad(
                &with_data(&bt.params, x),
                &bt.model,
                &traj,
                &bt.space,
                &loss_cfg,
                7,
                term,
            )
        };
        out.push(LossCheck {
            loss: term.name().to_string(),
            report: grad_check_sweep(f, bt.params.as_slice(), probes, &SUITE_STEPS, &mut rng)?,
        });
    }

    // PPO loss away from the rollout parameters so ratios differ from one.
    let ppo_cfg = PpoLossConfig {
        clip_eps: base.clip_eps,
        value_loss_coef: base.value_loss_coef,
        entropy_coef: base.resolved_entropy_coef()?,
        carry_hidden: base.rl2_carry_hidden,
    };
    for method in [Method::Dynamite, Method::Rl2Lite] {
        let cfg = TrainConfig {
            method,
            ..base.clone()
        };
        let (agent, _) = Agent::new(&cfg)?;
        let rollouts = (0..2)
            .map(|i| agent.rollout(horizon, p, derive_seed(seed, &[0x42, i]), ActMode::Sample))
            .collect::<Result<Vec<_>>>()?;
        let batch = build_batch(&rollouts, cfg.gamma, cfg.gae_lambda)?;
        let eps: Vec<&[_]> = batch.episodes.iter().map(|e| e.as_slice()).collect();
        let mut at = agent.params.clone();
        jitter(&mut at, 0.02, &mut rng);
        let f = |x: &[f64]| {
            ppo_loss(exec, &with_data(&at, x), &agent.net, &eps, &ppo_cfg)
                .map(|(b, g)| (b.total, g))
        };
        out.push(LossCheck {
            loss: format!("ppo_{}", method.name()),
            report: grad_check_sweep(f, at.as_slice(), probes, &SUITE_STEPS, &mut rng)?,
        });
    }

    // IQL losses on belief-feature transitions.
    let trajs = (0..2)
        .map(|i| {
            agent
                .rollout(horizon, p, derive_seed(seed, &[0x43, i]), ActMode::Sample)
                .map(|r| r.trajectory)
        })
        .collect::<Result<Vec<_>>>()?;
    let data = dataset_transitions(&trajs, Some((&bt.model, &bt.params)), &bt.space, exec)?;
    let feature_dim = data.features[0].len();
    let iql = IqlConfig::from_train(&base);
    let nets = IqlNets::new(bt.space.clone(), feature_dim, &[32, 32]);
    let mut params = nets.init_params(&mut rng);
    for p in [
        &mut params.value,
        &mut params.critic,
        &mut params.target,
        &mut params.actor,
    ] {
        jitter(p, 0.02, &mut rng);
    }
    let batch: Vec<usize> = (0..data.len()).step_by(3).collect();
    {
        let f = |x: &[f64]| {
            let p = IqlParams {
                value: with_data(&params.value, x),
                ..params.clone()
            };
            value_loss_grad(exec, &nets, &p, &data, &batch, iql.expectile_tau)
        };
        out.push(LossCheck {
            loss: "iql_value_expectile".into(),
            report: grad_check_sweep(f, params.value.as_slice(), probes, &SUITE_STEPS, &mut rng)?,
        });
    }
    {
        let f = |x: &[f64]| {
            let p = IqlParams {
                critic: with_data(&params.critic, x),
                ..params.clone()
            };
            q_loss_grad(exec, &nets, &p, &data, &batch, iql.gamma)
        };
        out.push(LossCheck {
            loss: "iql_q_td".into(),
            report: grad_check_sweep(f, params.critic.as_slice(), probes, &SUITE_STEPS, &mut rng)?,
        });
    }
    {
        let f = |x: &[f64]| {
            let p = IqlParams {
                actor: with_data(&params.actor, x),
                ..params.clone()
            };
            actor_loss_grad(
                exec,
                &nets,
                &p,
                &data,
                &batch,
                iql.awr_beta,
                iql.awr_weight_max,
            )
            .map(|(l, _, g)| (l, g))
        };
        out.push(LossCheck {
            loss: "iql_awr".into(),
            report: grad_check_sweep(f, params.actor.as_slice(), probes, &SUITE_STEPS, &mut rng)?,
        });
    }
    Ok(out)
}
