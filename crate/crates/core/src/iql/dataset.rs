use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::learner::Transitions;
use crate::belief::{encode_trajectory, BeliefModel, BeliefTrainer};
use crate::config::TrainConfig;
use crate::dlcmdp::{read_trajectories, write_trajectories, ActionSpace, Trajectory};
use crate::error::{ensure, Error, Result};
use crate::exec::{self, derive_seed, Exec};
use crate::metrics::file_hash;
use crate::numerics::ModelParams;
use crate::ppo::{ActMode, Agent};

const COLLECT_STREAM: u64 = 0x20;
const FIT_STREAM: u64 = 0x21;

/// Sidecar describing a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub env: String,
    pub horizon: usize,
    pub switch_prob: f64,
    pub seed: u64,
    pub n_transitions: usize,
    pub n_episodes: usize,
    /// Identifies the collecting policy.
    pub collector: String,
    pub oracle_checkpoint_hash: Option<String>,
    pub mean_episode_return: f64,
    pub data_file: String,
    pub data_hash: String,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    pub manifest: DatasetManifest,
    pub trajectories: Vec<Trajectory>,
}

impl OfflineDataset {
    pub fn num_transitions(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// Writes `<path>` (JSON Lines) and `<path>.manifest.json`.
    pub fn save(&mut self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        write_trajectories(path, &self.trajectories)?;
        self.manifest.data_file = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        self.manifest.data_hash = file_hash(path)?;
        std::fs::write(
            manifest_path(path),
            serde_json::to_string_pretty(&self.manifest)? + "\n",
        )?;
        Ok(())
    }

    /// Reads a dataset and checks it against its manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let manifest: DatasetManifest =
            serde_json::from_str(&std::fs::read_to_string(manifest_path(path))?)?;
        let trajectories = read_trajectories(BufReader::new(File::open(path)?), path)?;
        let ds = Self {
            manifest,
            trajectories,
        };
        let fail = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        if ds.num_transitions() != ds.manifest.n_transitions
            || ds.trajectories.len() != ds.manifest.n_episodes
        {
            return Err(fail(format!(
                "manifest declares {} transitions in {} episodes, file has {} in {}",
                ds.manifest.n_transitions,
                ds.manifest.n_episodes,
                ds.num_transitions(),
                ds.trajectories.len()
            )));
        }
        if let Some(t) = ds
            .trajectories
            .iter()
            .find(|t| t.env_name != ds.manifest.env)
        {
            return Err(fail(format!(
                "episode from `{}` in a `{}` dataset",
                t.env_name, ds.manifest.env
            )));
        }
        Ok(ds)
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Rolls out `agent` until exactly `n_transitions` steps are collected; the
/// last episode is cut short when needed. Episodes whose mean return falls
/// below `return_threshold` are flagged in the manifest, not rejected.
pub fn collect_offline_dataset(
    agent: &Agent,
    horizon: usize,
    switch_prob: f64,
    n_transitions: usize,
    seed: u64,
    return_threshold: f64,
    oracle_checkpoint_hash: Option<String>,
    exec: Exec,
) -> Result<OfflineDataset> {
    ensure(n_transitions >= 1, || {
        "dataset needs at least one transition".into()
    })?;
    let episodes = n_transitions.div_ceil(horizon);
    let mut trajectories: Vec<Trajectory> = exec::map_indexed(exec, episodes, |i| {
        agent
            .rollout(
                horizon,
                switch_prob,
                derive_seed(seed, &[COLLECT_STREAM, i as u64]),
                ActMode::Sample,
            )
            .map(|r| r.trajectory)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let extra = episodes * horizon - n_transitions;
    if extra > 0 {
        let last = trajectories.last_mut().expect("at least one episode");
        truncate(last, horizon - extra);
    }
    let mean_episode_return = trajectories
        .iter()
        .map(Trajectory::total_reward)
        .sum::<f64>()
        / episodes as f64;
    let mut warnings = Vec::new();
    if mean_episode_return < return_threshold {
        warnings.push(format!(
            "collecting policy averaged {mean_episode_return:.3} per episode, below the threshold {return_threshold}"
        ));
    }
    Ok(OfflineDataset {
        manifest: DatasetManifest {
            env: agent.spec.name.clone(),
            horizon,
            switch_prob,
            seed,
            n_transitions,
            n_episodes: episodes,
            collector: format!("ppo:{}", agent.method.name()),
            oracle_checkpoint_hash,
            mean_episode_return,
            data_file: String::new(),
            data_hash: String::new(),
            warnings,
        },
        trajectories,
    })
}

fn truncate(t: &mut Trajectory, len: usize) {
    t.states.truncate(len + 1);
    t.actions.truncate(len);
    t.rewards.truncate(len);
    t.dones.truncate(len);
    if let Some(d) = t.dones.last_mut() {
        *d = true;
    }
    t.schedule.session_ids.truncate(len);
    t.schedule.switch_flags.truncate(len.saturating_sub(1));
    t.latents.truncate(t.schedule.num_sessions());
}

/// Fits a belief model to the dataset's trajectories (first phase of
/// belief-feature offline training).
pub fn fit_offline_belief(
    trajectories: &[Trajectory],
    state_dim: usize,
    space: &ActionSpace,
    cfg: &TrainConfig,
    seed: u64,
    exec: Exec,
) -> Result<BeliefTrainer> {
    ensure(!trajectories.is_empty(), || "no trajectories to fit".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[FIT_STREAM]));
    let mut bt = BeliefTrainer::new(
        cfg.belief_arch()?,
        state_dim,
        space.clone(),
        cfg.resolved_state_decoder()?,
        cfg.vae_loss(),
        cfg.vae_lr,
        &mut rng,
    );
    let k = cfg.vae_batch_episodes.clamp(1, trajectories.len());
    for u in 0..cfg.belief_fit_updates {
        let idx = rand::seq::index::sample(&mut rng, trajectories.len(), k);
        let batch: Vec<Trajectory> = idx.iter().map(|i| trajectories[i].clone()).collect();
        bt.update(exec, &batch, u, derive_seed(seed, &[FIT_STREAM, u as u64]))?;
    }
    Ok(bt)
}

/// Flattens trajectories into transitions. With a belief model, step `t`
/// sees `[s_t, mu_t, sigma_t]` from the posterior after `s_t`; without one,
/// just `s_t`.
pub fn dataset_transitions(
    trajectories: &[Trajectory],
    belief: Option<(&BeliefModel, &ModelParams)>,
    space: &ActionSpace,
    exec: Exec,
) -> Result<Transitions> {
    let per_episode: Vec<Result<Transitions>> = exec::map_slice(exec, trajectories, |tr| {
        let feats: Vec<Vec<f64>> = match belief {
            Some((model, params)) => {
                let q = encode_trajectory(params, model, tr, space)?;
                tr.states
                    .iter()
                    .zip(&q)
                    .map(|(s, b)| {
                        let mut f = s.clone();
                        f.extend(b.features());
                        f
                    })
                    .collect()
            }
            None => tr.states.clone(),
        };
        Ok(Transitions {
            features: feats[..tr.len()].to_vec(),
            actions: tr.actions.clone(),
            rewards: tr.rewards.clone(),
            next_features: feats[1..].to_vec(),
            dones: tr.dones.clone(),
        })
    });
    let mut out = Transitions::default();
    for t in per_episode {
        let t = t?;
        out.features.extend(t.features);
        out.actions.extend(t.actions);
        out.rewards.extend(t.rewards);
        out.next_features.extend(t.next_features);
        out.dones.extend(t.dones);
    }
    Ok(out)
}
