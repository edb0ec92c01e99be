//! Run configuration: one flat key-value document, TOML for people and JSON
//! for tools. Keys missing from a file take the defaults below; keys left
//! unset here (`None`) resolve from the environment's hyperparameter
//! column.

pub mod table1;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::belief::{BeliefArch, ConsistencyDirection, KlPrior, ReconScope, VaeLossConfig};
use crate::envs::EnvKind;
use crate::error::{ensure, Error, Result};

/// Training method.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Session-aware belief: consistency and termination terms, session-scoped reconstruction.
    #[default]
    Dynamite,
    /// Same belief model without the consistency and termination terms,
    /// reconstructing the whole trajectory.
    VaribadAblation,
    /// Recurrent policy over raw `(s, r, a)` history.
    Rl2Lite,
    /// State-only policy.
    Blind,
    /// Policy given the true context.
    Oracle,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Dynamite,
        Method::VaribadAblation,
        Method::Rl2Lite,
        Method::Blind,
        Method::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dynamite => "dynamite",
            Method::VaribadAblation => "varibad-ablation",
            Method::Rl2Lite => "rl2-lite",
            Method::Blind => "blind",
            Method::Oracle => "oracle",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| Error::invalid(format!("unknown method `{name}`")))
    }

    pub fn uses_belief(self) -> bool {
        matches!(self, Method::Dynamite | Method::VaribadAblation)
    }
}

/// What the belief-conditioned policy reads from the posterior.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BeliefInput {
    /// Mean and standard deviation.
    #[default]
    MeanSigma,
    /// One reparameterized sample per step.
    Sample,
}

/// Per-step inputs of the offline learner.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OfflineFeatures {
    /// State plus the posterior of a belief model fitted to the dataset.
    #[default]
    Belief,
    RawState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub env: String,
    pub method: Method,
    pub seed: u64,
    pub out: PathBuf,
    pub horizon: Option<usize>,
    pub switch_prob: Option<f64>,
    /// Environment steps per online run.
    pub total_steps: u64,
    pub n_workers: Option<usize>,

    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub value_loss_coef: f64,
    pub entropy_coef: Option<f64>,
    pub max_grad_norm: f64,
    pub policy_lr: f64,
    pub ppo_epochs: usize,
    pub ppo_minibatches: usize,
    pub policy_hidden: Vec<usize>,
    pub belief_input: BeliefInput,
    pub rl2_carry_hidden: bool,

    pub vae_lr: f64,
    pub latent_dim: Option<usize>,
    pub embed_size: Option<usize>,
    pub encoder_trunk: Vec<usize>,
    pub gru_hidden: usize,
    pub decoder_hidden: Vec<usize>,
    /// `None`: on exactly when the context changes the dynamics.
    pub state_decoder: Option<bool>,
    pub kl_weight: f64,
    pub consistency_weight: f64,
    pub termination_weight: f64,
    pub recon_anchors: usize,
    pub recon_scope: Option<ReconScope>,
    pub kl_prior: KlPrior,
    pub consistency_direction: ConsistencyDirection,
    pub consistency_stop_grad: bool,
    pub vae_buffer_episodes: usize,
    pub vae_batch_episodes: usize,
    pub vae_updates_per_iter: usize,

    pub expectile_tau: f64,
    pub awr_beta: f64,
    pub awr_weight_max: f64,
    pub iql_gradient_steps: usize,
    pub iql_batch_size: usize,
    pub iql_actor_lr: f64,
    pub iql_critic_lr: f64,
    pub iql_hidden: Vec<usize>,
    pub target_update_rate: f64,
    pub offline_gamma: Option<f64>,
    pub offline_features: OfflineFeatures,
    pub belief_fit_updates: usize,
    pub dataset_transitions: usize,
    /// Source dataset for `train-offline`; `None` collects one first.
    pub dataset: Option<PathBuf>,
    /// Oracle checkpoint for `collect-dataset`; `None` trains one first.
    pub oracle_checkpoint: Option<PathBuf>,
    /// Collections whose mean episode return falls below this get a warning.
    pub oracle_return_threshold: f64,

    pub eval_episodes: usize,
    pub eval_seeds: usize,
    /// Adds elapsed seconds to the metrics; this makes the CSV nondeterministic.
    pub record_wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: "gridworld".into(),
            method: Method::Dynamite,
            seed: 0,
            out: PathBuf::from("out"),
            horizon: None,
            switch_prob: None,
            total_steps: 1_000_000,
            n_workers: None,

            gamma: table1::GRIDWORLD.gamma,
            gae_lambda: table1::GRIDWORLD.gae_lambda,
            clip_eps: table1::GRIDWORLD.clip_eps,
            value_loss_coef: table1::GRIDWORLD.value_loss_coef,
            entropy_coef: None,
            max_grad_norm: table1::GRIDWORLD.max_grad_norm,
            policy_lr: table1::GRIDWORLD.policy_lr,
            ppo_epochs: 4,
            ppo_minibatches: 4,
            policy_hidden: vec![128, 128],
            belief_input: BeliefInput::MeanSigma,
            rl2_carry_hidden: true,

            vae_lr: table1::GRIDWORLD.vae_lr,
            latent_dim: None,
            embed_size: None,
            encoder_trunk: vec![64, 64],
            gru_hidden: 64,
            decoder_hidden: vec![32, 32],
            state_decoder: None,
            kl_weight: table1::GRIDWORLD.kl_weight,
            consistency_weight: table1::GRIDWORLD.consistency_weight,
            termination_weight: 1.0,
            recon_anchors: 16,
            recon_scope: None,
            kl_prior: KlPrior::StandardNormal,
            consistency_direction: ConsistencyDirection::Forward,
            consistency_stop_grad: false,
            vae_buffer_episodes: 256,
            vae_batch_episodes: 16,
            vae_updates_per_iter: 1,

            expectile_tau: table1::IQL_EXPECTILE,
            awr_beta: table1::IQL_AWR_BETA,
            awr_weight_max: 100.0,
            iql_gradient_steps: 5000,
            iql_batch_size: 256,
            iql_actor_lr: 3e-4,
            iql_critic_lr: 3e-4,
            iql_hidden: vec![128, 128],
            target_update_rate: 0.005,
            offline_gamma: None,
            offline_features: OfflineFeatures::Belief,
            belief_fit_updates: 500,
            dataset_transitions: 100_000,
            dataset: None,
            oracle_checkpoint: None,
            oracle_return_threshold: 0.0,

            eval_episodes: 100,
            eval_seeds: table1::IQL_EVAL_SEEDS,
            record_wall_clock: false,
        }
    }
}

impl TrainConfig {
    pub fn env_kind(&self) -> Result<EnvKind> {
        EnvKind::parse(&self.env)
    }

    fn column(&self) -> Result<&'static table1::Column> {
        Ok(self.env_kind()?.column())
    }

    pub fn resolved_horizon(&self) -> Result<usize> {
        Ok(self.horizon.unwrap_or(self.column()?.horizon))
    }

    pub fn resolved_switch_prob(&self) -> Result<f64> {
        Ok(self.switch_prob.unwrap_or(self.column()?.switch_prob))
    }

    pub fn resolved_workers(&self) -> Result<usize> {
        Ok(self.n_workers.unwrap_or(self.column()?.n_workers))
    }

    pub fn resolved_entropy_coef(&self) -> Result<f64> {
        Ok(self.entropy_coef.unwrap_or(self.column()?.entropy_coef))
    }

    pub fn resolved_state_decoder(&self) -> Result<bool> {
        Ok(self
            .state_decoder
            .unwrap_or(self.env_kind()?.dynamics_vary()))
    }

    pub fn resolved_offline_gamma(&self) -> f64 {
        self.offline_gamma.unwrap_or(self.gamma)
    }

    pub fn belief_arch(&self) -> Result<BeliefArch> {
        let col = self.column()?;
        Ok(BeliefArch {
            embed_size: self.embed_size.unwrap_or(col.embed_size),
            trunk_sizes: self.encoder_trunk.clone(),
            gru_hidden: self.gru_hidden,
            latent_dim: self.latent_dim.unwrap_or(col.latent_dim),
            decoder_sizes: self.decoder_hidden.clone(),
        })
    }

    /// Belief objective for the configured method. The ablation drops the
    /// consistency and termination terms and reconstructs whole
    /// trajectories.
    pub fn vae_loss(&self) -> VaeLossConfig {
        let ablation = self.method == Method::VaribadAblation;
        VaeLossConfig {
            kl_weight: self.kl_weight,
            consistency_weight: if ablation {
                0.0
            } else {
                self.consistency_weight
            },
            termination_weight: if ablation {
                0.0
            } else {
                self.termination_weight
            },
            recon_anchors: self.recon_anchors,
            recon_scope: self.recon_scope.unwrap_or(if ablation {
                ReconScope::Trajectory
            } else {
                ReconScope::Session
            }),
            kl_prior: self.kl_prior,
            consistency_direction: self.consistency_direction,
            consistency_stop_grad: self.consistency_stop_grad,
        }
    }

    /// Copy with every environment-dependent field filled in.
    pub fn resolved(&self) -> Result<TrainConfig> {
        let col = self.column()?;
        let mut c = self.clone();
        c.horizon = Some(self.resolved_horizon()?);
        c.switch_prob = Some(self.resolved_switch_prob()?);
        c.n_workers = Some(self.resolved_workers()?);
        c.entropy_coef = Some(self.resolved_entropy_coef()?);
        c.latent_dim = Some(self.latent_dim.unwrap_or(col.latent_dim));
        c.embed_size = Some(self.embed_size.unwrap_or(col.embed_size));
        c.state_decoder = Some(self.resolved_state_decoder()?);
        c.recon_scope = Some(self.vae_loss().recon_scope);
        c.offline_gamma = Some(self.resolved_offline_gamma());
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.env_kind()?;
        ensure(self.gamma > 0.0 && self.gamma <= 1.0, || {
            format!("gamma {} outside (0, 1]", self.gamma)
        })?;
        ensure((0.0..=1.0).contains(&self.gae_lambda), || {
            format!("gae_lambda {} outside [0, 1]", self.gae_lambda)
        })?;
        ensure(self.clip_eps > 0.0, || {
            format!("clip_eps {} must be positive", self.clip_eps)
        })?;
        ensure(self.max_grad_norm > 0.0, || {
            "max_grad_norm must be positive".into()
        })?;
        ensure(self.expectile_tau > 0.0 && self.expectile_tau < 1.0, || {
            format!("expectile_tau {} outside (0, 1)", self.expectile_tau)
        })?;
        ensure(self.awr_beta >= 0.0, || {
            format!("awr_beta {} is negative", self.awr_beta)
        })?;
        ensure(self.ppo_epochs >= 1 && self.ppo_minibatches >= 1, || {
            "need at least one PPO epoch and minibatch".into()
        })?;
        ensure(self.resolved_workers()? >= 1, || {
            "n_workers must be at least 1".into()
        })?;
        ensure(self.resolved_horizon()? >= 1, || {
            "horizon must be at least 1".into()
        })?;
        let p = self.resolved_switch_prob()?;
        ensure((0.0..=1.0).contains(&p), || {
            format!("switch_prob {p} outside [0, 1]")
        })?;
        ensure(self.eval_seeds >= 1 && self.eval_episodes >= 1, || {
            "evaluation needs episodes and seeds".into()
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("cannot serialize config: {e}")))
    }

    /// Every key a config file may set.
    pub fn known_keys() -> BTreeSet<String> {
        match serde_json::to_value(TrainConfig::default()) {
            Ok(serde_json::Value::Object(m)) => m.keys().cloned().collect(),
            _ => unreachable!("config serializes to an object"),
        }
    }
}

/// Reads a config file. `.json` files (or any file starting with `{`) are
/// JSON, everything else TOML; an empty file gives the defaults.
pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text, path)
}

pub fn parse_config(text: &str, origin: &Path) -> Result<TrainConfig> {
    let is_json =
        origin.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
    let value: serde_json::Value = if text.trim().is_empty() {
        serde_json::Value::Object(Default::default())
    } else if is_json {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?
    } else {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
            message: e.message().to_string(),
        })?;
        serde_json::to_value(table)?
    };
    let serde_json::Value::Object(map) = &value else {
        return Err(Error::Format {
            path: origin.to_path_buf(),
            message: "config must be a key-value table".into(),
        });
    };
    let known = TrainConfig::known_keys();
    if let Some(k) = map.keys().find(|k| !known.contains(*k)) {
        return Err(Error::UnknownKey(k.clone()));
    }
    let cfg: TrainConfig = serde_json::from_value(value).map_err(|e| Error::Format {
        path: origin.to_path_buf(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}
