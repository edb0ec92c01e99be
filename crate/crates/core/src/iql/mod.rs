//! Offline path: oracle data collection, expectile value learning and
//! advantage-weighted policy extraction.

mod dataset;
mod learner;
mod losses;

pub use dataset::{
    collect_offline_dataset, dataset_transitions, fit_offline_belief, manifest_path,
    DatasetManifest, OfflineDataset,
};
pub use learner::{
    actor_loss_grad, offline_features, q_loss_grad, train_iql, value_loss_grad, FeatureSource,
    IqlActor, IqlConfig, IqlNets, IqlParams, Transitions,
};
pub use losses::{
    awr_policy_loss, awr_weight, cosine_lr, expectile_loss, expectile_weight, sample_expectile,
};

use crate::belief::{BeliefModel, FrozenEncoder};
use crate::config::{OfflineFeatures, TrainConfig};
use crate::dlcmdp::{rollout_episode, BeliefEncoder};
use crate::envs::make_env;
use crate::error::Result;
use crate::exec::{self, derive_seed, Exec};
use crate::metrics::{OfflineRow, RunSink};
use crate::numerics::ModelParams;
use crate::ppo::ActMode;

const EVAL_STREAM: u64 = 0x30;

/// Trained offline agent.
#[derive(Clone, Debug)]
pub struct OfflineRun {
    pub nets: IqlNets,
    pub params: IqlParams,
    pub belief: Option<(BeliefModel, ModelParams)>,
    pub source: FeatureSource,
}

/// Two-phase offline training: optionally fit a belief model on the
/// dataset and encode it, then run IQL on the resulting transitions.
pub fn train_offline(
    ds: &OfflineDataset,
    cfg: &TrainConfig,
    seed: u64,
    exec: Exec,
    sink: &mut dyn RunSink<OfflineRow>,
) -> Result<OfflineRun> {
    let env = make_env(
        &ds.manifest.env,
        Some(ds.manifest.horizon),
        Some(ds.manifest.switch_prob),
    )?;
    let spec = env.spec().clone();
    let belief = match cfg.offline_features {
        OfflineFeatures::Belief => {
            let bt = fit_offline_belief(
                &ds.trajectories,
                spec.state_dim,
                &spec.action_space,
                cfg,
                seed,
                exec,
            )?;
            sink.checkpoint("offline-belief", &bt.params, bt.updates())?;
            Some((bt.model, bt.params))
        }
        OfflineFeatures::RawState => None,
    };
    let data = dataset_transitions(
        &ds.trajectories,
        belief.as_ref().map(|(m, p)| (m, p)),
        &spec.action_space,
        exec,
    )?;
    let (source, feature_dim) = match &belief {
        Some((m, _)) => (
            FeatureSource::StateAndBelief,
            spec.state_dim + 2 * m.latent_dim(),
        ),
        None => (FeatureSource::State, spec.state_dim),
    };
    let nets = IqlNets::new(spec.action_space.clone(), feature_dim, &cfg.iql_hidden);
    let params = train_iql(&data, &nets, &IqlConfig::from_train(cfg), seed, exec, sink)?;
    Ok(OfflineRun {
        nets,
        params,
        belief,
        source,
    })
}

/// Episode returns of an offline agent on held-out seeds.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_offline(
    run: &OfflineRun,
    env_name: &str,
    horizon: usize,
    switch_prob: f64,
    episodes: usize,
    seed: u64,
    mode: ActMode,
    exec: Exec,
) -> Result<Vec<f64>> {
    exec::map_indexed(exec, episodes, |i| {
        let mut env = make_env(env_name, Some(horizon), Some(switch_prob))?;
        let mut actor = IqlActor {
            nets: &run.nets,
            actor: &run.params.actor,
            source: run.source,
            mode,
        };
        let enc = run
            .belief
            .as_ref()
            .map(|(model, params)| FrozenEncoder { model, params });
        let r = rollout_episode(
            env.as_mut(),
            &mut actor,
            enc.as_ref().map(|e| e as &dyn BeliefEncoder),
            derive_seed(seed, &[EVAL_STREAM, i as u64]),
        )?;
        Ok(r.trajectory.total_reward())
    })
    .into_iter()
    .collect()
}
