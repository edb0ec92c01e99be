//! Variational objective of the belief model.
//!
//! Indexing: the encoder produces `q_0 ..= q_T`. The belief after step `t`
//! is `b_t = q_{t+1}`, which has seen the reward of step `t`. The
//! termination head of `b_{t+1}` is scored against `switch_flags[t]`: it is
//! the first posterior that has observed a reward drawn under the new
//! context.
//!
//! Reconstruction terms are squared errors summed over the reconstructed
//! steps (estimated from the sampled anchors), then averaged over beliefs;
//! the KL, consistency and termination terms are per-step means.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::{BeliefModel, EncodedStep};
use super::PosteriorState;
use crate::dlcmdp::{ActionSpace, SessionSchedule, Trajectory};
use crate::error::{ensure, Error, Result};
use crate::exec::{self, Exec};
use crate::numerics::{
    kl_diag_gaussian, kl_diag_gaussian_var, kl_standard_normal_var, reparameterize_var,
    ModelParams, Tape, Var,
};

/// Which steps each posterior must reconstruct.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReconScope {
    /// Every step of the trajectory.
    Trajectory,
    /// Only steps of the session the posterior is in.
    Session,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlPrior {
    StandardNormal,
    PreviousPosterior,
}

/// Direction of the within-session consistency divergence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConsistencyDirection {
    /// `KL(q_t || q_{t-1})`
    Forward,
    /// `KL(q_{t-1} || q_t)`
    Reverse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeLossConfig {
    pub kl_weight: f64,
    pub consistency_weight: f64,
    pub termination_weight: f64,
    pub recon_anchors: usize,
    pub recon_scope: ReconScope,
    pub kl_prior: KlPrior,
    pub consistency_direction: ConsistencyDirection,
    /// Treat the earlier posterior of each consistency pair as a constant.
    pub consistency_stop_grad: bool,
}

impl Default for VaeLossConfig {
    fn default() -> Self {
        Self {
            kl_weight: 0.01,
            consistency_weight: 0.5,
            termination_weight: 1.0,
            recon_anchors: 16,
            recon_scope: ReconScope::Session,
            kl_prior: KlPrior::StandardNormal,
            consistency_direction: ConsistencyDirection::Forward,
            consistency_stop_grad: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VaeLossBreakdown {
    pub recon_reward: f64,
    pub recon_state: f64,
    pub kl: f64,
    pub consistency: f64,
    pub termination: f64,
    pub total: f64,
}

impl VaeLossBreakdown {
    fn scaled_add(&mut self, other: &VaeLossBreakdown, w: f64) {
        self.recon_reward += w * other.recon_reward;
        self.recon_state += w * other.recon_state;
        self.kl += w * other.kl;
        self.consistency += w * other.consistency;
        self.termination += w * other.termination;
        self.total += w * other.total;
    }
}

fn bce_with_logit(x: f64, y: f64) -> f64 {
    x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy of `term_logits[t]` against `switch_flags[t]`.
pub fn termination_loss(term_logits: &[f64], schedule: &SessionSchedule) -> Result<f64> {
    ensure(term_logits.len() == schedule.switch_flags.len(), || {
        format!(
            "{} termination logits for {} switch flags",
            term_logits.len(),
            schedule.switch_flags.len()
        )
    })?;
    if term_logits.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = term_logits
        .iter()
        .zip(&schedule.switch_flags)
        .map(|(&x, &f)| bce_with_logit(x, f as u8 as f64))
        .sum();
    Ok(total / term_logits.len() as f64)
}

/// Within-session posterior drift with the default forward direction.
pub fn consistency_loss(posteriors: &[PosteriorState], schedule: &SessionSchedule) -> Result<f64> {
    consistency_loss_with(posteriors, schedule, ConsistencyDirection::Forward)
}

/// Mean over steps `t >= 1` with `switch_flags[t-1]` unset of the KL
/// between consecutive posteriors; zero when no pair qualifies.
pub fn consistency_loss_with(
    posteriors: &[PosteriorState],
    schedule: &SessionSchedule,
    direction: ConsistencyDirection,
) -> Result<f64> {
    ensure(posteriors.len() == schedule.horizon(), || {
        format!(
            "{} posteriors for horizon {}",
            posteriors.len(),
            schedule.horizon()
        )
    })?;
    let mut total = 0.0;
    let mut count = 0usize;
    for t in 1..posteriors.len() {
        if schedule.switch_flags[t - 1] {
            continue;
        }
        let (cur, prev) = (&posteriors[t], &posteriors[t - 1]);
        total += match direction {
            ConsistencyDirection::Forward => {
                kl_diag_gaussian(&cur.mu, &cur.sigma, &prev.mu, &prev.sigma)?
            }
            ConsistencyDirection::Reverse => {
                kl_diag_gaussian(&prev.mu, &prev.sigma, &cur.mu, &cur.sigma)?
            }
        };
        count += 1;
    }
    Ok(if count == 0 {
        0.0
    } else {
        total / count as f64
    })
}

/// Node handles of one trajectory's loss terms.
pub struct VaeGraph {
    pub recon_reward: Var,
    pub recon_state: Var,
    pub kl: Var,
    pub consistency: Var,
    pub termination: Var,
    pub total: Var,
    /// Encoder outputs for `q_0 ..= q_T`.
    pub steps: Vec<EncodedStep>,
}

/// Records the full objective for `traj` on `tape`. Reparameterization noise
/// and reconstruction anchors come from `noise_seed`.
pub fn vae_graph(
    tape: &mut Tape<'_>,
    model: &BeliefModel,
    traj: &Trajectory,
    space: &ActionSpace,
    cfg: &VaeLossConfig,
    noise_seed: u64,
) -> Result<VaeGraph> {
    let horizon = traj.len();
    ensure(horizon >= 1, || "cannot score an empty trajectory".into())?;
    traj.check()?;
    ensure(traj.states[0].len() == model.state_dim, || {
        "trajectory state width differs from the model".into()
    })?;
    ensure(space.encoded_dim() == model.action_dim, || {
        "action space width differs from the model".into()
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let latent_dim = model.latent_dim();

    let states: Vec<Var> = traj.states.iter().map(|s| tape.constant(s)).collect();
    let actions: Vec<Var> = traj
        .actions
        .iter()
        .map(|a| tape.constant(&space.encode(a)))
        .collect();
    let rewards: Vec<Var> = traj.rewards.iter().map(|&r| tape.constant(&[r])).collect();

    let mut steps = Vec::with_capacity(horizon + 1);
    let zero_action = tape.constant(&vec![0.0; model.action_dim]);
    let zero_reward = tape.constant(&[0.0]);
    let h0 = tape.constant(&vec![0.0; model.hidden_dim()]);
    steps.push(model.encode_var(tape, h0, zero_action, zero_reward, states[0]));
    for t in 0..horizon {
        let h = steps[t].hidden;
        steps.push(model.encode_var(tape, h, actions[t], rewards[t], states[t + 1]));
    }

    // Reconstruction from each belief b_t = q_{t+1}.
    let session_ids = &traj.schedule.session_ids;
    let mut reward_terms = Vec::with_capacity(horizon);
    let mut state_terms = Vec::with_capacity(horizon);
    let all_steps: Vec<usize> = (0..horizon).collect();
    for t in 0..horizon {
        let belief = steps[t + 1];
        let candidates: Vec<usize> = match cfg.recon_scope {
            ReconScope::Trajectory => all_steps.clone(),
            ReconScope::Session => all_steps
                .iter()
                .copied()
                .filter(|&j| session_ids[j] == session_ids[t])
                .collect(),
        };
        let n_candidates = candidates.len();
        let anchors: Vec<usize> = if cfg.recon_anchors == 0 || candidates.len() <= cfg.recon_anchors
        {
            candidates
        } else {
            let mut pick: Vec<usize> = sample(&mut rng, candidates.len(), cfg.recon_anchors)
                .into_iter()
                .map(|i| candidates[i])
                .collect();
            pick.sort_unstable();
            pick
        };
        let eps: Vec<f64> = (0..latent_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let m = reparameterize_var(tape, belief.mu, belief.sigma, &eps);
        let mut r_err = Vec::with_capacity(anchors.len());
        let mut s_err = Vec::with_capacity(anchors.len());
        for &j in &anchors {
            let pred = model.decode_reward_var(tape, m, states[j + 1], actions[j]);
            let d = tape.sub(pred, rewards[j]);
            r_err.push(tape.square(d));
            if let Some(next) = model.decode_state_var(tape, m, states[j], actions[j]) {
                let d = tape.sub(next, states[j + 1]);
                let sq = tape.square(d);
                s_err.push(tape.mean(sq));
            }
        }
        // Anchor sums rescaled to estimate the sum over every candidate step.
        let coverage = n_candidates as f64 / anchors.len() as f64;
        let r_all = tape.concat(&r_err);
        let r_sum = tape.sum(r_all);
        reward_terms.push(tape.scale(r_sum, coverage));
        if !s_err.is_empty() {
            let s_all = tape.concat(&s_err);
            let s_sum = tape.sum(s_all);
            state_terms.push(tape.scale(s_sum, coverage));
        }
    }
    let recon_reward = mean_of(tape, &reward_terms);
    let recon_state = if state_terms.is_empty() {
        tape.scalar(0.0)
    } else {
        mean_of(tape, &state_terms)
    };

    // KL of each belief against its prior.
    let mut kl_terms = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let b = steps[t + 1];
        kl_terms.push(match cfg.kl_prior {
            KlPrior::StandardNormal => kl_standard_normal_var(tape, b.mu, b.sigma),
            KlPrior::PreviousPosterior => {
                let p = steps[t];
                kl_diag_gaussian_var(tape, b.mu, b.sigma, p.mu, p.sigma)
            }
        });
    }
    let kl = mean_of(tape, &kl_terms);

    // Consistency between consecutive beliefs of the same session.
    let mut cons_terms = Vec::new();
    for t in 1..horizon {
        if traj.schedule.switch_flags[t - 1] {
            continue;
        }
        let cur = steps[t + 1];
        let mut prev = steps[t];
        if cfg.consistency_stop_grad {
            prev.mu = tape.detach(prev.mu);
            prev.sigma = tape.detach(prev.sigma);
        }
        cons_terms.push(match cfg.consistency_direction {
            ConsistencyDirection::Forward => {
                kl_diag_gaussian_var(tape, cur.mu, cur.sigma, prev.mu, prev.sigma)
            }
            ConsistencyDirection::Reverse => {
                kl_diag_gaussian_var(tape, prev.mu, prev.sigma, cur.mu, cur.sigma)
            }
        });
    }
    let consistency = if cons_terms.is_empty() {
        tape.scalar(0.0)
    } else {
        mean_of(tape, &cons_terms)
    };

    // Session termination: logit of b_{t+1} = q_{t+2} against switch_flags[t].
    let mut bce_terms = Vec::with_capacity(horizon.saturating_sub(1));
    for (t, &flag) in traj
        .schedule
        .switch_flags
        .iter()
        .enumerate()
        .take(horizon.saturating_sub(1))
    {
        let x = steps[t + 2].term_logit;
        let sp = tape.softplus(x);
        let xy = tape.scale(x, flag as u8 as f64);
        bce_terms.push(tape.sub(sp, xy));
    }
    let termination = if bce_terms.is_empty() {
        tape.scalar(0.0)
    } else {
        mean_of(tape, &bce_terms)
    };

    let kl_w = tape.scale(kl, cfg.kl_weight);
    let cons_w = tape.scale(consistency, cfg.consistency_weight);
    let term_w = tape.scale(termination, cfg.termination_weight);
    let mut total = tape.add(recon_reward, recon_state);
    total = tape.add(total, kl_w);
    total = tape.add(total, cons_w);
    total = tape.add(total, term_w);

    Ok(VaeGraph {
        recon_reward,
        recon_state,
        kl,
        consistency,
        termination,
        total,
        steps,
    })
}

fn mean_of(tape: &mut Tape<'_>, terms: &[Var]) -> Var {
    let all = tape.concat(terms);
    tape.mean(all)
}

fn breakdown(tape: &Tape<'_>, g: &VaeGraph) -> VaeLossBreakdown {
    VaeLossBreakdown {
        recon_reward: tape.scalar_value(g.recon_reward),
        recon_state: tape.scalar_value(g.recon_state),
        kl: tape.scalar_value(g.kl),
        consistency: tape.scalar_value(g.consistency),
        termination: tape.scalar_value(g.termination),
        total: tape.scalar_value(g.total),
    }
}

fn divergence(tape: &Tape<'_>, g: &VaeGraph, b: &VaeLossBreakdown) -> Error {
    let first_bad = g.steps.iter().position(|s| {
        tape.value(s.mu)
            .iter()
            .chain(tape.value(s.sigma))
            .any(|x| !x.is_finite())
            || !tape.scalar_value(s.term_logit).is_finite()
    });
    Error::Divergence {
        stage: "vae_loss",
        iteration: 0,
        detail: format!("non-finite loss {b:?}; first non-finite posterior at step {first_bad:?}"),
    }
}

/// Loss breakdown for one trajectory.
pub fn vae_loss(
    params: &ModelParams,
    model: &BeliefModel,
    traj: &Trajectory,
    space: &ActionSpace,
    cfg: &VaeLossConfig,
    noise_seed: u64,
) -> Result<VaeLossBreakdown> {
    model.check_params(params)?;
    let mut tape = Tape::new(params.as_slice());
    let g = vae_graph(&mut tape, model, traj, space, cfg, noise_seed)?;
    let b = breakdown(&tape, &g);
    if !b.total.is_finite() {
        return Err(divergence(&tape, &g, &b));
    }
    Ok(b)
}

/// Loss breakdown and gradient of `total` for one trajectory.
pub fn vae_loss_grad(
    params: &ModelParams,
    model: &BeliefModel,
    traj: &Trajectory,
    space: &ActionSpace,
    cfg: &VaeLossConfig,
    noise_seed: u64,
) -> Result<(VaeLossBreakdown, Vec<f64>)> {
    let mut grad = vec![0.0; params.len()];
    let b = vae_loss_accumulate(params, model, traj, space, cfg, noise_seed, 1.0, &mut grad)?;
    Ok((b, grad))
}

#[allow(clippy::too_many_arguments)]
fn vae_loss_accumulate(
    params: &ModelParams,
    model: &BeliefModel,
    traj: &Trajectory,
    space: &ActionSpace,
    cfg: &VaeLossConfig,
    noise_seed: u64,
    weight: f64,
    grad: &mut [f64],
) -> Result<VaeLossBreakdown> {
    model.check_params(params)?;
    let mut tape = Tape::new(params.as_slice());
    let g = vae_graph(&mut tape, model, traj, space, cfg, noise_seed)?;
    let b = breakdown(&tape, &g);
    if !b.total.is_finite() {
        return Err(divergence(&tape, &g, &b));
    }
    tape.backward_scaled(g.total, weight, grad);
    Ok(b)
}

/// One scalar of the variational objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VaeTerm {
    Total,
    ReconReward,
    ReconState,
    Kl,
    Consistency,
    Termination,
}

impl VaeTerm {
    pub const ALL: [VaeTerm; 6] = [
        VaeTerm::Total,
        VaeTerm::ReconReward,
        VaeTerm::ReconState,
        VaeTerm::Kl,
        VaeTerm::Consistency,
        VaeTerm::Termination,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VaeTerm::Total => "vae_total",
            VaeTerm::ReconReward => "vae_recon_reward",
            VaeTerm::ReconState => "vae_recon_state",
            VaeTerm::Kl => "vae_kl",
            VaeTerm::Consistency => "vae_consistency",
            VaeTerm::Termination => "vae_termination",
        }
    }
}

/// Value and gradient of a single (unweighted) term for one trajectory.
pub fn vae_term_grad(
    params: &ModelParams,
    model: &BeliefModel,
    traj: &Trajectory,
    space: &ActionSpace,
    cfg: &VaeLossConfig,
    noise_seed: u64,
    term: VaeTerm,
) -> Result<(f64, Vec<f64>)> {
    model.check_params(params)?;
    let mut tape = Tape::new(params.as_slice());
    let g = vae_graph(&mut tape, model, traj, space, cfg, noise_seed)?;
    let v = match term {
        VaeTerm::Total => g.total,
        VaeTerm::ReconReward => g.recon_reward,
        VaeTerm::ReconState => g.recon_state,
        VaeTerm::Kl => g.kl,
        VaeTerm::Consistency => g.consistency,
        VaeTerm::Termination => g.termination,
    };
    let value = tape.scalar_value(v);
    let mut grad = vec![0.0; params.len()];
    tape.backward_scaled(v, 1.0, &mut grad);
    Ok((value, grad))
}

/// Mean breakdown and mean gradient over a batch of trajectories.
/// Trajectory `i` uses noise seed `noise_seed + i`.
pub fn vae_batch_grad(
    exec: Exec,
    params: &ModelParams,
    model: &BeliefModel,
    trajs: &[Trajectory],
    space: &ActionSpace,
    cfg: &VaeLossConfig,
    noise_seed: u64,
) -> Result<(VaeLossBreakdown, Vec<f64>)> {
    ensure(!trajs.is_empty(), || "empty trajectory batch".into())?;
    let w = 1.0 / trajs.len() as f64;
    let indexed: Vec<(usize, &Trajectory)> = trajs.iter().enumerate().collect();
    let (results, grad) = exec::sum_gradients(exec, &indexed, params.len(), |(i, traj), g| {
        vae_loss_accumulate(
            params,
            model,
            traj,
            space,
            cfg,
            noise_seed.wrapping_add(*i as u64),
            w,
            g,
        )
    });
    let mut mean = VaeLossBreakdown::default();
    for r in results {
        mean.scaled_add(&r?, w);
    }
    Ok((mean, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn post(mu: &[f64], sigma: &[f64]) -> PosteriorState {
        PosteriorState {
            mu: mu.to_vec(),
            sigma: sigma.to_vec(),
            term_logit: 0.0,
            hidden: vec![],
        }
    }

    #[test]
    fn termination_loss_at_zero_logits_is_ln2() {
        let s = SessionSchedule::from_flags(vec![false, true, false, false, true, false]);
        let l = termination_loss(&[0.0; 6], &s).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((l - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn saturated_termination_logits() {
        let s = SessionSchedule::from_flags(vec![false, true, false, false, true, false]);
        let logits: Vec<f64> = s
            .switch_flags
            .iter()
            .map(|&f| if f { 20.0 } else { -20.0 })
            .collect();
        assert!(termination_loss(&logits, &s).unwrap() < 1e-6);
        assert!(termination_loss(&logits[..3], &s).is_err());
    }

    #[test]
    fn consistency_examples() {
        let s = SessionSchedule::from_flags(vec![false; 4]);
        let same = vec![post(&[0.3, -1.0], &[0.5, 2.0]); 5];
        assert_eq!(consistency_loss(&same, &s).unwrap(), 0.0);
        let all_switch = SessionSchedule::from_flags(vec![true; 3]);
        let drifting: Vec<_> = (0..4).map(|i| post(&[i as f64], &[1.0])).collect();
        assert_eq!(consistency_loss(&drifting, &all_switch).unwrap(), 0.0);
        assert!(consistency_loss(&drifting[..2], &all_switch).is_err());
    }

    #[test]
    fn bce_matches_naive_form() {
        for &(x, y) in &[(0.3, 1.0), (-2.0, 0.0), (4.0, 0.0), (-1.5, 1.0)] {
            let p: f64 = 1.0 / (1.0 + (-x as f64).exp());
            let naive = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            assert!((bce_with_logit(x, y) - naive).abs() < 1e-12);
        }
    }
}
