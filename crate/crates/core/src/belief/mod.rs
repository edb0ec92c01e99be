//! Recurrent variational belief model: per-step Gaussian posterior over the
//! context, a session-termination head, reward/state decoders, and the
//! training objective.

mod losses;
mod model;
mod trainer;

use serde::{Deserialize, Serialize};

pub use losses::{
    consistency_loss, consistency_loss_with, termination_loss, vae_batch_grad, vae_graph, vae_loss,
    vae_loss_grad, vae_term_grad, ConsistencyDirection, KlPrior, ReconScope, VaeGraph,
    VaeLossBreakdown, VaeLossConfig, VaeTerm,
};
pub use model::{
    decode_reward, decode_state, encode_step, encode_trajectory, BeliefArch, BeliefModel,
    EncodedStep, FrozenEncoder, SIGMA_FLOOR,
};
pub use trainer::BeliefTrainer;

/// Per-step belief: Gaussian over the context, termination logit and the
/// recurrent state that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorState {
    pub mu: Vec<f64>,
    /// Standard deviation (softplus of the raw head, floored).
    pub sigma: Vec<f64>,
    pub term_logit: f64,
    pub hidden: Vec<f64>,
}

impl PosteriorState {
    pub fn termination_prob(&self) -> f64 {
        crate::numerics::sigmoid(self.term_logit)
    }

    /// `[mu, sigma]`, the policy's view of the belief.
    pub fn features(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.mu.len());
        v.extend(&self.mu);
        v.extend(&self.sigma);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.mu
            .iter()
            .chain(&self.sigma)
            .chain(&self.hidden)
            .all(|x| x.is_finite())
            && self.term_logit.is_finite()
    }
}
