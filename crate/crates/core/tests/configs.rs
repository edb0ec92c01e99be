use std::path::PathBuf;

use dynamite::config::{load_config, table1, TrainConfig};
use dynamite::envs::{EnvKind, ENV_NAMES};

fn shipped(env: &str) -> (PathBuf, TrainConfig) {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(format!("{env}.toml"));
    let c = load_config(&p).unwrap();
    (p, c)
}

#[test]
fn shipped_configs_are_fully_resolved_defaults() {
    for env in ENV_NAMES {
        let (path, cfg) = shipped(env);
        assert_eq!(cfg.env, env);
        let defaults = TrainConfig {
            env: env.into(),
            ..TrainConfig::default()
        }
        .resolved()
        .unwrap();
        assert_eq!(cfg, defaults, "{}", path.display());
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            cfg.to_toml().unwrap()
        );
    }
}

#[test]
fn shipped_configs_follow_their_table_column() {
    for env in ENV_NAMES {
        let (_, c) = shipped(env);
        let col = EnvKind::parse(env).unwrap().column();
        assert_eq!(c.horizon, Some(col.horizon));
        assert_eq!(c.switch_prob, Some(col.switch_prob));
        assert_eq!(c.latent_dim, Some(col.latent_dim));
        assert_eq!(c.embed_size, Some(col.embed_size));
        assert_eq!(c.entropy_coef, Some(col.entropy_coef));
        assert_eq!(
            (
                c.gamma,
                c.gae_lambda,
                c.clip_eps,
                c.value_loss_coef,
                c.max_grad_norm
            ),
            (
                col.gamma,
                col.gae_lambda,
                col.clip_eps,
                col.value_loss_coef,
                col.max_grad_norm
            )
        );
        assert_eq!((c.policy_lr, c.vae_lr), (col.policy_lr, col.vae_lr));
        assert_eq!(
            (c.consistency_weight, c.kl_weight),
            (col.consistency_weight, col.kl_weight)
        );
    }
    assert_eq!(table1::ALL.len(), 4);
    assert_eq!(table1::IQL_EXPECTILE, 0.9);
}
