use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{awr_weight, cosine_lr, expectile_weight};
use crate::config::TrainConfig;
use crate::dlcmdp::{Action, ActionSpace, Actor, Observation};
use crate::error::{ensure, Error, Result};
use crate::exec::{self, derive_seed, Exec};
use crate::metrics::{OfflineRow, RunSink};
use crate::numerics::{
    diag_gaussian_log_prob_var, Activation, Adam, AdamConfig, Init, Mlp, ModelParams,
    ParamsBuilder, Slot, Tape, Var,
};
use crate::ppo::{squash, ActMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IqlConfig {
    pub expectile_tau: f64,
    pub awr_beta: f64,
    pub awr_weight_max: f64,
    pub gradient_steps: usize,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden: Vec<usize>,
    pub target_update_rate: f64,
    pub gamma: f64,
    /// Gradient steps per logged row.
    pub log_every: usize,
}

impl IqlConfig {
    pub fn from_train(cfg: &TrainConfig) -> Self {
        Self {
            expectile_tau: cfg.expectile_tau,
            awr_beta: cfg.awr_beta,
            awr_weight_max: cfg.awr_weight_max,
            gradient_steps: cfg.iql_gradient_steps,
            batch_size: cfg.iql_batch_size,
            actor_lr: cfg.iql_actor_lr,
            critic_lr: cfg.iql_critic_lr,
            hidden: cfg.iql_hidden.clone(),
            target_update_rate: cfg.target_update_rate,
            gamma: cfg.resolved_offline_gamma(),
            log_every: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.expectile_tau > 0.0 && self.expectile_tau < 1.0, || {
            format!("expectile_tau {} outside (0, 1)", self.expectile_tau)
        })?;
        ensure(self.awr_beta >= 0.0, || {
            format!("awr_beta {} is negative", self.awr_beta)
        })?;
        ensure(self.batch_size >= 1, || {
            "batch_size must be positive".into()
        })?;
        ensure(self.gamma > 0.0 && self.gamma <= 1.0, || {
            format!("gamma {} outside (0, 1]", self.gamma)
        })
    }
}

/// Flat transition set the learner samples from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Transitions {
    pub features: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub next_features: Vec<Vec<f64>>,
    pub dones: Vec<bool>,
}

impl Transitions {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn check(&self, feature_dim: usize) -> Result<()> {
        let n = self.len();
        ensure(
            self.features.len() == n
                && self.actions.len() == n
                && self.next_features.len() == n
                && self.dones.len() == n,
            || "transition columns have different lengths".into(),
        )?;
        ensure(
            self.features
                .iter()
                .chain(&self.next_features)
                .all(|f| f.len() == feature_dim),
            || format!("transition features must have length {feature_dim}"),
        )
    }
}

/// Value, twin-Q and actor networks; each has its own parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct IqlNets {
    pub space: ActionSpace,
    pub feature_dim: usize,
    value: Mlp,
    q1: Mlp,
    q2: Mlp,
    actor: Mlp,
    log_std: Option<Slot>,
    builders: [Vec<crate::numerics::SliceInfo>; 3],
}

/// Parameters of an [`IqlNets`] plus the target critic.
#[derive(Clone, Debug, PartialEq)]
pub struct IqlParams {
    pub value: ModelParams,
    pub critic: ModelParams,
    pub target: ModelParams,
    pub actor: ModelParams,
}

impl IqlNets {
    pub fn new(space: ActionSpace, feature_dim: usize, hidden: &[usize]) -> Self {
        let (n_out, q_in, q_out) = match &space {
            ActionSpace::Discrete { n } => (*n, feature_dim, *n),
            ActionSpace::Continuous { dim, .. } => (*dim, feature_dim + dim, 1),
        };
        let sizes = |i: usize, o: usize| {
            let mut v = vec![i];
            v.extend(hidden);
            v.push(o);
            v
        };
        let mut bv = ParamsBuilder::new();
        let value = Mlp::new(&mut bv, "value", &sizes(feature_dim, 1), Activation::Relu);
        let mut bq = ParamsBuilder::new();
        let q1 = Mlp::new(&mut bq, "q1", &sizes(q_in, q_out), Activation::Relu);
        let q2 = Mlp::new(&mut bq, "q2", &sizes(q_in, q_out), Activation::Relu);
        let mut ba = ParamsBuilder::new();
        let actor = Mlp::new(
            &mut ba,
            "actor",
            &sizes(feature_dim, n_out),
            Activation::Relu,
        );
        let log_std = matches!(space, ActionSpace::Continuous { .. })
            .then(|| ba.vector("actor.log_std", n_out, Init::Zeros));
        let layout = |b: ParamsBuilder| {
            b.build_zeros()
                .expect("IQL names are unique")
                .slices()
                .to_vec()
        };
        Self {
            space,
            feature_dim,
            value,
            q1,
            q2,
            actor,
            log_std,
            builders: [layout(bv), layout(bq), layout(ba)],
        }
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> IqlParams {
        let mut build = |layout: &[crate::numerics::SliceInfo]| {
            let mut b = ParamsBuilder::new();
            for s in layout {
                match s.shape.as_slice() {
                    [r, c] => b.matrix(s.name.clone(), *r, *c, s.init),
                    [n] => b.vector(s.name.clone(), *n, s.init),
                    _ => unreachable!("IQL slices are matrices or vectors"),
                };
            }
            b.build(rng).expect("IQL names are unique")
        };
        let value = build(&self.builders[0]);
        let critic = build(&self.builders[1]);
        let actor = build(&self.builders[2]);
        IqlParams {
            value,
            target: critic.clone(),
            critic,
            actor,
        }
    }

    pub fn actor_layout(&self) -> &[crate::numerics::SliceInfo] {
        &self.builders[2]
    }

    fn value_var(&self, tape: &mut Tape<'_>, features: &[f64]) -> Var {
        let x = tape.constant(features);
        self.value.forward(tape, x)
    }

    fn q_vars(&self, tape: &mut Tape<'_>, features: &[f64], action: &Action) -> Result<(Var, Var)> {
        match (&self.space, action) {
            (ActionSpace::Discrete { n }, Action::Discrete(a)) => {
                ensure(a < n, || format!("action {a} outside {n} choices"))?;
                let x = tape.constant(features);
                let q1 = self.q1.forward(tape, x);
                let q2 = self.q2.forward(tape, x);
                Ok((tape.slice(q1, *a, 1), tape.slice(q2, *a, 1)))
            }
            (ActionSpace::Continuous { .. }, Action::Continuous(a)) => {
                let mut f = features.to_vec();
                f.extend(a);
                let x = tape.constant(&f);
                Ok((self.q1.forward(tape, x), self.q2.forward(tape, x)))
            }
            _ => Err(Error::invalid(
                "action kind does not match the action space",
            )),
        }
    }

    /// `min(Q1, Q2)` under the given critic parameters.
    pub fn q_min(&self, critic: &ModelParams, features: &[f64], action: &Action) -> Result<f64> {
        let mut tape = Tape::new(critic.as_slice());
        let (a, b) = self.q_vars(&mut tape, features, action)?;
        Ok(tape.scalar_value(a).min(tape.scalar_value(b)))
    }

    pub fn value_of(&self, value: &ModelParams, features: &[f64]) -> f64 {
        let mut tape = Tape::new(value.as_slice());
        let v = self.value_var(&mut tape, features);
        tape.scalar_value(v)
    }

    fn actor_log_prob_var(
        &self,
        tape: &mut Tape<'_>,
        features: &[f64],
        action: &Action,
    ) -> Result<Var> {
        let x = tape.constant(features);
        let out = self.actor.forward(tape, x);
        match (&self.space, action) {
            (ActionSpace::Discrete { n }, Action::Discrete(a)) => {
                ensure(a < n, || format!("action {a} outside {n} choices"))?;
                let ls = tape.log_softmax(out);
                Ok(tape.slice(ls, *a, 1))
            }
            (ActionSpace::Continuous { low, high, .. }, Action::Continuous(a)) => {
                let u = unsquash(a, *low, *high);
                let ls = tape.param(self.log_std.expect("continuous actor has a log-std"));
                Ok(diag_gaussian_log_prob_var(tape, out, ls, &u))
            }
            _ => Err(Error::invalid(
                "action kind does not match the action space",
            )),
        }
    }

    /// Raw actor output: logits or Gaussian mean.
    pub fn actor_output(&self, actor: &ModelParams, features: &[f64]) -> Vec<f64> {
        let mut tape = Tape::new(actor.as_slice());
        let x = tape.constant(features);
        let out = self.actor.forward(&mut tape, x);
        tape.value(out).to_vec()
    }

    pub fn actor_log_std(&self, actor: &ModelParams) -> Option<Vec<f64>> {
        self.log_std.map(|s| actor.as_slice()[s.range()].to_vec())
    }
}

/// Inverse of [`squash`], kept inside the open interval.
fn unsquash(a: &[f64], low: f64, high: f64) -> Vec<f64> {
    a.iter()
        .map(|x| {
            let y = (2.0 * (x - low) / (high - low) - 1.0).clamp(-1.0 + 1e-6, 1.0 - 1e-6);
            y.atanh()
        })
        .collect()
}

/// Expectile regression of `V(s)` toward `min Q_target(s, a)`, averaged
/// over `batch`; returns the loss and its gradient in the value store.
pub fn value_loss_grad(
    exec: Exec,
    nets: &IqlNets,
    p: &IqlParams,
    data: &Transitions,
    batch: &[usize],
    tau: f64,
) -> Result<(f64, Vec<f64>)> {
    let w = 1.0 / batch.len() as f64;
    let (outs, grad) = exec::sum_gradients(exec, batch, p.value.len(), |&i, g| -> Result<f64> {
        let target = nets.q_min(&p.target, &data.features[i], &data.actions[i])?;
        let mut tape = Tape::new(p.value.as_slice());
        let v = nets.value_var(&mut tape, &data.features[i]);
        let neg_v = tape.neg(v);
        let u = tape.shift(neg_v, target);
        let u2 = tape.square(u);
        let loss = tape.scale(u2, expectile_weight(tape.scalar_value(u), tau));
        tape.backward_scaled(loss, w, g);
        Ok(tape.scalar_value(loss))
    });
    finish("value_loss", outs, grad, w)
}

/// TD regression of both critics toward `r + gamma (1 - done) V(s')`.
pub fn q_loss_grad(
    exec: Exec,
    nets: &IqlNets,
    p: &IqlParams,
    data: &Transitions,
    batch: &[usize],
    gamma: f64,
) -> Result<(f64, Vec<f64>)> {
    let w = 1.0 / batch.len() as f64;
    let (outs, grad) = exec::sum_gradients(exec, batch, p.critic.len(), |&i, g| -> Result<f64> {
        let live = if data.dones[i] { 0.0 } else { 1.0 };
        let y = data.rewards[i] + gamma * live * nets.value_of(&p.value, &data.next_features[i]);
        let mut tape = Tape::new(p.critic.as_slice());
        let (q1, q2) = nets.q_vars(&mut tape, &data.features[i], &data.actions[i])?;
        let e1 = tape.shift(q1, -y);
        let e1 = tape.square(e1);
        let e2 = tape.shift(q2, -y);
        let e2 = tape.square(e2);
        let loss = tape.add(e1, e2);
        tape.backward_scaled(loss, w, g);
        Ok(tape.scalar_value(loss))
    });
    finish("q_loss", outs, grad, w)
}

/// Advantage-weighted log-likelihood, `-mean(min(exp(beta A), w_max) log pi(a|s))`,
/// with `A = min Q_target(s, a) - V(s)`. Also returns the mean weight.
pub fn actor_loss_grad(
    exec: Exec,
    nets: &IqlNets,
    p: &IqlParams,
    data: &Transitions,
    batch: &[usize],
    beta: f64,
    w_max: f64,
) -> Result<(f64, f64, Vec<f64>)> {
    let w = 1.0 / batch.len() as f64;
    let (outs, grad) =
        exec::sum_gradients(exec, batch, p.actor.len(), |&i, g| -> Result<(f64, f64)> {
            let weight = if beta == 0.0 {
                1.0
            } else {
                let adv = nets.q_min(&p.target, &data.features[i], &data.actions[i])?
                    - nets.value_of(&p.value, &data.features[i]);
                awr_weight(adv, beta, w_max)
            };
            let mut tape = Tape::new(p.actor.as_slice());
            let lp = nets.actor_log_prob_var(&mut tape, &data.features[i], &data.actions[i])?;
            let loss = tape.scale(lp, -weight);
            tape.backward_scaled(loss, w, g);
            Ok((tape.scalar_value(loss), weight))
        });
    let mut loss = 0.0;
    let mut mean_w = 0.0;
    for o in outs {
        let (l, wt) = o?;
        loss += l * w;
        mean_w += wt * w;
    }
    check_finite("actor_loss", loss, &grad)?;
    Ok((loss, mean_w, grad))
}

fn finish(
    stage: &'static str,
    outs: Vec<Result<f64>>,
    grad: Vec<f64>,
    w: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut loss = 0.0;
    for o in outs {
        loss += o? * w;
    }
    check_finite(stage, loss, &grad)?;
    Ok((loss, grad))
}

fn check_finite(stage: &'static str, loss: f64, grad: &[f64]) -> Result<()> {
    if loss.is_finite() && grad.iter().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence {
            stage,
            iteration: 0,
            detail: format!("non-finite loss {loss} or gradient"),
        })
    }
}

/// Implicit Q-learning: per step, a value expectile update, a critic TD
/// update, an advantage-weighted actor update on a cosine schedule, and a
/// Polyak target update. With `awr_beta == 0` all weights are one, so the
/// critics are skipped and the actor is plain behavior cloning.
pub fn train_iql(
    data: &Transitions,
    nets: &IqlNets,
    cfg: &IqlConfig,
    seed: u64,
    exec: Exec,
    sink: &mut dyn RunSink<OfflineRow>,
) -> Result<IqlParams> {
    cfg.validate()?;
    data.check(nets.feature_dim)?;
    ensure(!data.is_empty(), || "offline dataset is empty".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x10]));
    let mut p = nets.init_params(&mut rng);
    let critic_cfg = AdamConfig {
        lr: cfg.critic_lr,
        ..Default::default()
    };
    let mut adam_v = Adam::new(critic_cfg, p.value.len());
    let mut adam_q = Adam::new(critic_cfg, p.critic.len());
    let mut adam_pi = Adam::new(
        AdamConfig {
            lr: cfg.actor_lr,
            ..Default::default()
        },
        p.actor.len(),
    );
    let train_critics = cfg.awr_beta != 0.0;
    let mut acc = OfflineRow::default();
    let mut in_block = 0usize;
    for step in 0..cfg.gradient_steps {
        let batch: Vec<usize> = (0..cfg.batch_size)
            .map(|_| rng.random_range(0..data.len()))
            .collect();
        let tag = |e: Error| match e {
            Error::Divergence { stage, detail, .. } => Error::Divergence {
                stage,
                iteration: step,
                detail,
            },
            other => other,
        };
        if train_critics {
            let (lv, gv) =
                value_loss_grad(exec, nets, &p, data, &batch, cfg.expectile_tau).map_err(tag)?;
            adam_v.step(p.value.as_mut_slice(), &gv);
            let (lq, gq) = q_loss_grad(exec, nets, &p, data, &batch, cfg.gamma).map_err(tag)?;
            adam_q.step(p.critic.as_mut_slice(), &gq);
            acc.value_loss += lv;
            acc.q_loss += lq;
        }
        let (la, mw, ga) = actor_loss_grad(
            exec,
            nets,
            &p,
            data,
            &batch,
            cfg.awr_beta,
            cfg.awr_weight_max,
        )
        .map_err(tag)?;
        let lr = cosine_lr(step, cfg.gradient_steps, cfg.actor_lr);
        adam_pi.step_with_lr(p.actor.as_mut_slice(), &ga, lr);
        if train_critics {
            let critic = p.critic.clone();
            p.target.polyak_from(&critic, cfg.target_update_rate);
        }
        acc.actor_loss += la;
        acc.mean_weight += mw;
        acc.actor_lr = lr;
        in_block += 1;
        if in_block == cfg.log_every.max(1) || step + 1 == cfg.gradient_steps {
            let k = in_block as f64;
            let row = OfflineRow {
                step: step + 1,
                value_loss: acc.value_loss / k,
                q_loss: acc.q_loss / k,
                actor_loss: acc.actor_loss / k,
                actor_lr: acc.actor_lr,
                mean_weight: acc.mean_weight / k,
                wall_clock_s: None,
            };
            sink.row(&row)?;
            acc = OfflineRow::default();
            in_block = 0;
        }
    }
    sink.checkpoint("iql-actor", &p.actor, cfg.gradient_steps as u64)?;
    sink.checkpoint("iql-value", &p.value, cfg.gradient_steps as u64)?;
    sink.checkpoint("iql-critic", &p.critic, cfg.gradient_steps as u64)?;
    Ok(p)
}

/// How the offline actor builds its input from an observation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureSource {
    State,
    StateAndBelief,
}

/// `[s]` or `[s, mu, sigma]`.
pub fn offline_features(source: FeatureSource, obs: &Observation<'_>) -> Result<Vec<f64>> {
    let mut f = obs.state.to_vec();
    if source == FeatureSource::StateAndBelief {
        let b = obs
            .belief
            .ok_or_else(|| Error::invalid("belief features requested without an encoder"))?;
        f.extend(b.features());
    }
    Ok(f)
}

/// Acts with a trained offline actor.
pub struct IqlActor<'a> {
    pub nets: &'a IqlNets,
    pub actor: &'a ModelParams,
    pub source: FeatureSource,
    pub mode: ActMode,
}

impl Actor for IqlActor<'_> {
    type Info = ();

    fn act(&mut self, obs: &Observation<'_>, rng: &mut dyn RngCore) -> Result<(Action, ())> {
        let f = offline_features(self.source, obs)?;
        let out = self.nets.actor_output(self.actor, &f);
        let action = match &self.nets.space {
            ActionSpace::Discrete { .. } => {
                let a = match self.mode {
                    ActMode::Greedy => {
                        (0..out.len()).fold(0, |b, i| if out[i] > out[b] { i } else { b })
                    }
                    ActMode::Sample => {
                        let m = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let w: Vec<f64> = out.iter().map(|l| (l - m).exp()).collect();
                        let mut u = rng.random::<f64>() * w.iter().sum::<f64>();
                        let mut pick = w.len() - 1;
                        for (i, wi) in w.iter().enumerate() {
                            if u < *wi {
                                pick = i;
                                break;
                            }
                            u -= wi;
                        }
                        pick
                    }
                };
                Action::Discrete(a)
            }
            ActionSpace::Continuous { low, high, .. } => {
                let u: Vec<f64> = match self.mode {
                    ActMode::Greedy => out,
                    ActMode::Sample => {
                        let ls = self.nets.actor_log_std(self.actor).unwrap_or_default();
                        out.iter()
                            .zip(&ls)
                            .map(|(m, l)| {
                                m + l.exp()
                                    * rand_distr::Distribution::<f64>::sample(
                                        &rand_distr::StandardNormal,
                                        rng,
                                    )
                            })
                            .collect()
                    }
                };
                Action::Continuous(squash(&u, *low, *high))
            }
        };
        Ok((action, ()))
    }
}
