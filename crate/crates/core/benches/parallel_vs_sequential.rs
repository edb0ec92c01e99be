//! Rollout collection and the batched variational gradient in both
//! execution modes. Build with `--no-default-features` to see the
//! fallback, where both modes run sequentially.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dynamite::belief::{vae_batch_grad, BeliefTrainer};
use dynamite::config::TrainConfig;
use dynamite::envs::env_spec;
use dynamite::exec::Exec;
use dynamite::experiments::random_episodes;

const MODES: [(&str, Exec); 2] = [
    ("sequential", Exec::Sequential),
    ("parallel", Exec::Parallel),
];

fn rollouts(c: &mut Criterion) {
    let mut g = c.benchmark_group("random_rollouts_gridworld_16x60");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| random_episodes("gridworld", 60, 0.07, 16, 0, exec).unwrap())
        });
    }
    g.finish();
}

fn vae_gradient(c: &mut Criterion) {
    let cfg = TrainConfig {
        env: "windy-chain".into(),
        ..TrainConfig::default()
    }
    .resolved()
    .unwrap();
    let spec = env_spec("windy-chain").unwrap();
    let trajs = random_episodes("windy-chain", 100, 0.05, 16, 1, Exec::Parallel).unwrap();
    let bt = BeliefTrainer::new(
        cfg.belief_arch().unwrap(),
        spec.state_dim,
        spec.action_space.clone(),
        true,
        cfg.vae_loss(),
        cfg.vae_lr,
        &mut ChaCha8Rng::seed_from_u64(0),
    );
    let mut g = c.benchmark_group("vae_batch_grad_windy_16x100");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                vae_batch_grad(exec, &bt.params, &bt.model, &trajs, &bt.space, &bt.loss, 0).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, rollouts, vae_gradient);
criterion_main!(benches);
