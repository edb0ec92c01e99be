use rand::Rng;

use super::{vae_batch_grad, BeliefArch, BeliefModel, VaeLossBreakdown, VaeLossConfig};
use crate::dlcmdp::{ActionSpace, Trajectory};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::numerics::{Adam, AdamConfig, ModelParams};

/// Belief model, its parameters and optimizer state.
#[derive(Clone, Debug)]
pub struct BeliefTrainer {
    pub model: BeliefModel,
    pub params: ModelParams,
    pub loss: VaeLossConfig,
    pub space: ActionSpace,
    adam: Adam,
    updates: u64,
}

impl BeliefTrainer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        arch: BeliefArch,
        state_dim: usize,
        space: ActionSpace,
        with_state_decoder: bool,
        loss: VaeLossConfig,
        lr: f64,
        rng: &mut R,
    ) -> Self {
        let model = BeliefModel::new(arch, state_dim, space.encoded_dim(), with_state_decoder);
        let params = model.init_params(rng);
        let adam = Adam::new(
            AdamConfig {
                lr,
                ..Default::default()
            },
            params.len(),
        );
        Self {
            model,
            params,
            loss,
            space,
            adam,
            updates: 0,
        }
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// One Adam step on the mean loss of `batch`.
    pub fn update(
        &mut self,
        exec: Exec,
        batch: &[Trajectory],
        iteration: usize,
        noise_seed: u64,
    ) -> Result<VaeLossBreakdown> {
        let (loss, grad) = vae_batch_grad(
            exec,
            &self.params,
            &self.model,
            batch,
            &self.space,
            &self.loss,
            noise_seed,
        )
        .map_err(|e| match e {
            Error::Divergence { stage, detail, .. } => Error::Divergence {
                stage,
                iteration,
                detail,
            },
            other => other,
        })?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                stage: "vae_update",
                iteration,
                detail: format!("non-finite gradient (loss {loss:?})"),
            });
        }
        self.adam.step(self.params.as_mut_slice(), &grad);
        self.updates += 1;
        Ok(loss)
    }
}
