use serde::{Deserialize, Serialize};

use super::policy::{PolicyNet, RawAction};
use crate::error::{ensure, Error, Result};
use crate::exec::{self, Exec};
use crate::numerics::{ModelParams, Tape};

/// One step of collected experience.
#[derive(Clone, Debug, PartialEq)]
pub struct PpoStep {
    pub state: Vec<f64>,
    /// Posterior `[mu, sigma]` seen when acting; empty without an encoder.
    pub belief: Vec<f64>,
    /// Exact network input.
    pub features: Vec<f64>,
    pub action: RawAction,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
    pub session_id: usize,
    pub advantage: f64,
    pub ret: f64,
}

/// Experience of one iteration, grouped by episode so recurrent policies
/// can be unrolled.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBatch {
    pub episodes: Vec<Vec<PpoStep>>,
}

impl RolloutBatch {
    pub fn num_steps(&self) -> usize {
        self.episodes.iter().map(Vec::len).sum()
    }

    pub fn steps(&self) -> impl Iterator<Item = &PpoStep> {
        self.episodes.iter().flatten()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpoLossConfig {
    pub clip_eps: f64,
    pub value_loss_coef: f64,
    pub entropy_coef: f64,
    /// Thread the recurrent state through each episode.
    pub carry_hidden: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoLossBreakdown {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total: f64,
    /// Largest `|ratio - 1|` in the batch.
    pub max_ratio_deviation: f64,
    pub clip_fraction: f64,
}

/// `-min(ratio * adv, clip(ratio, 1 - eps, 1 + eps) * adv)` for one sample.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    -(ratio * advantage).min(ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage)
}

/// `max((v - R)^2, (v_clip - R)^2)` with `v_clip = v_old + clip(v - v_old, -eps, eps)`.
pub fn clipped_value_error(value: f64, old_value: f64, ret: f64, clip_eps: f64) -> f64 {
    let clipped = old_value + (value - old_value).clamp(-clip_eps, clip_eps);
    (value - ret).powi(2).max((clipped - ret).powi(2))
}

/// Loss and its gradient over `episodes`, averaged over all their steps:
/// `policy + value_loss_coef * value - entropy_coef * entropy`.
pub fn ppo_loss(
    exec: Exec,
    params: &ModelParams,
    net: &PolicyNet,
    episodes: &[&[PpoStep]],
    cfg: &PpoLossConfig,
) -> Result<(PpoLossBreakdown, Vec<f64>)> {
    net.check_params(params)?;
    let n: usize = episodes.iter().map(|e| e.len()).sum();
    ensure(n > 0, || "PPO loss needs at least one step".into())?;
    let inv_n = 1.0 / n as f64;
    let (parts, grad) = exec::sum_gradients(exec, episodes, params.len(), |ep, g| {
        episode_terms(params, net, ep, cfg, inv_n, g)
    });
    let mut out = PpoLossBreakdown::default();
    let mut clipped = 0usize;
    for p in parts {
        let p = p?;
        out.policy_loss += p.policy;
        out.value_loss += p.value;
        out.entropy += p.entropy;
        out.max_ratio_deviation = out.max_ratio_deviation.max(p.max_dev);
        clipped += p.clipped;
    }
    out.policy_loss *= inv_n;
    out.value_loss *= inv_n;
    out.entropy *= inv_n;
    out.clip_fraction = clipped as f64 * inv_n;
    out.total =
        out.policy_loss + cfg.value_loss_coef * out.value_loss - cfg.entropy_coef * out.entropy;
    if !out.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence {
            stage: "ppo_loss",
            iteration: 0,
            detail: format!("non-finite loss or gradient ({out:?})"),
        });
    }
    Ok((out, grad))
}

struct EpisodeTerms {
    policy: f64,
    value: f64,
    entropy: f64,
    max_dev: f64,
    clipped: usize,
}

fn episode_terms(
    params: &ModelParams,
    net: &PolicyNet,
    ep: &[PpoStep],
    cfg: &PpoLossConfig,
    weight: f64,
    grad: &mut [f64],
) -> Result<EpisodeTerms> {
    let mut tape = Tape::new(params.as_slice());
    let feats: Vec<Vec<f64>> = ep.iter().map(|s| s.features.clone()).collect();
    let heads = net.episode_var(&mut tape, &feats, cfg.carry_hidden);
    let log_std = net.log_std_var(&mut tape);
    let eps = cfg.clip_eps;
    let mut pol_terms = Vec::with_capacity(ep.len());
    let mut val_terms = Vec::with_capacity(ep.len());
    let mut ent_terms = Vec::with_capacity(ep.len());
    let mut max_dev = 0.0f64;
    let mut clipped = 0;
    for (h, s) in heads.iter().zip(ep) {
        let lp = net.log_prob_var(&mut tape, h.dist, log_std, &s.action)?;
        let diff = tape.shift(lp, -s.log_prob);
        let ratio = tape.exp(diff);
        let r = tape.scalar_value(ratio);
        max_dev = max_dev.max((r - 1.0).abs());
        if (r - 1.0).abs() > eps {
            clipped += 1;
        }
        let surr1 = tape.scale(ratio, s.advantage);
        let rc = tape.clamp(ratio, 1.0 - eps, 1.0 + eps);
        let surr2 = tape.scale(rc, s.advantage);
        let m = tape.min(surr1, surr2);
        pol_terms.push(tape.neg(m));

        let dv = tape.shift(h.value, -s.value);
        let dv = tape.clamp(dv, -eps, eps);
        let v_clip = tape.shift(dv, s.value);
        let e1 = tape.shift(h.value, -s.ret);
        let e1 = tape.square(e1);
        let e2 = tape.shift(v_clip, -s.ret);
        let e2 = tape.square(e2);
        val_terms.push(tape.max(e1, e2));

        ent_terms.push(net.entropy_var(&mut tape, h.dist, log_std));
    }
    let pol = tape.concat(&pol_terms);
    let pol = tape.sum(pol);
    let val = tape.concat(&val_terms);
    let val = tape.sum(val);
    let ent = tape.concat(&ent_terms);
    let ent = tape.sum(ent);
    let wv = tape.scale(val, cfg.value_loss_coef);
    let we = tape.scale(ent, cfg.entropy_coef);
    let total = tape.add(pol, wv);
    let total = tape.sub(total, we);
    tape.backward_scaled(total, weight, grad);
    Ok(EpisodeTerms {
        policy: tape.scalar_value(pol),
        value: tape.scalar_value(val),
        entropy: tape.scalar_value(ent),
        max_dev,
        clipped,
    })
}
