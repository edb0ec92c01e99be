//! Acceptance criteria 1-9, one `criterion N: PASS|FAIL|SKIPPED` line each.
//!
//! Criteria 4-7 train many agents and take over an hour on one core; they
//! run only with `--full` (after `--`) or `DYNAMITE_ACCEPTANCE=full`.
//! Select criteria by number: `cargo test --test acceptance -- --full 4 5`.

use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use dynamite::belief::{encode_trajectory, termination_loss, BeliefArch, BeliefModel, SIGMA_FLOOR};
use dynamite::cli;
use dynamite::config::{load_config, table1, Method, TrainConfig};
use dynamite::diagnostics::{gradient_suite, SUITE_TOLERANCE};
use dynamite::dlcmdp::{sample_session_schedule, ActionSpace};
use dynamite::exec::Exec;
use dynamite::experiments::{
    decoder_discrimination, offline_comparison, ordering_experiment, significance, termination_auc,
    two_state_iql, MethodResult,
};
use dynamite::iql::{cosine_lr, expectile_loss, sample_expectile, IqlConfig};
use dynamite::numerics::{kl_diag_gaussian, ModelParams};
use dynamite::ppo::{compute_gae, normalize_advantages, train_online};
use dynamite::stats::{mann_whitney, mean};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn shipped_config(env: &str) -> TrainConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(format!("{env}.toml"));
    load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn steps_override(default: u64) -> u64 {
    std::env::var("DYNAMITE_ACCEPTANCE_STEPS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(default)
}

// 1. Finite-difference agreement of every loss.
fn gradient_suite_criterion() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut lines = Vec::new();
    for env in ["gridworld", "point-reacher", "windy-chain"] {
        for c in gradient_suite(env, 0, 64).expect("gradient suite runs") {
            if c.report.max_rel_error > worst.0 || worst.1.is_empty() {
                worst = (c.report.max_rel_error, format!("{env}/{}", c.loss));
            }
            lines.push(format!("{env}/{} {:.2e}", c.loss, c.report.max_rel_error));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst.0 < SUITE_TOLERANCE && secs < 120.0;
    outcome(
        pass,
        format!(
            "{} losses, worst {} = {:.2e} (< {SUITE_TOLERANCE:e}), {secs:.0}s (< 120s)",
            lines.len(),
            worst.1,
            worst.0
        ),
    )
}

// Encoder oracle built from plain arithmetic on named slices.
fn affine(p: &ModelParams, name: &str, x: &[f64]) -> Vec<f64> {
    let w = p.get(&format!("{name}.weight")).unwrap();
    let b = p.get(&format!("{name}.bias")).unwrap();
    let cols = x.len();
    (0..b.len())
        .map(|i| b[i] + (0..cols).map(|j| w[i * cols + j] * x[j]).sum::<f64>())
        .collect()
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn oracle_encoder_step(
    p: &ModelParams,
    h: &[f64],
    a: &[f64],
    r: f64,
    s: &[f64],
) -> (Vec<f64>, Vec<f64>, f64, Vec<f64>) {
    let mut x = relu(affine(p, "encoder.state_embed", s));
    x.extend(relu(affine(p, "encoder.action_embed", a)));
    x.extend(relu(affine(p, "encoder.reward_embed", &[r])));
    let t0 = relu(affine(p, "encoder.trunk.0", &x));
    let t1 = relu(affine(p, "encoder.trunk.1", &t0));
    let g = |n: &str, v: &[f64]| affine(p, &format!("encoder.gru.{n}"), v);
    let (ir, hr) = (g("input_reset", &t1), g("hidden_reset", h));
    let (iz, hz) = (g("input_update", &t1), g("hidden_update", h));
    let (inn, hn) = (g("input_new", &t1), g("hidden_new", h));
    let h2: Vec<f64> = (0..h.len())
        .map(|i| {
            let rg = sig(ir[i] + hr[i]);
            let z = sig(iz[i] + hz[i]);
            let n = (inn[i] + rg * hn[i]).tanh();
            (1.0 - z) * n + z * h[i]
        })
        .collect();
    let mu = affine(p, "encoder.mu", &h2);
    let sigma = affine(p, "encoder.sigma", &h2)
        .into_iter()
        .map(|x| (x.max(0.0) + (-x.abs()).exp().ln_1p()).max(SIGMA_FLOOR))
        .collect();
    let term = affine(p, "encoder.termination", &h2)[0];
    (mu, sigma, term, h2)
}

// 2. Closed-form and brute-force oracles.
fn oracle_suite_criterion() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut notes = Vec::new();
    let mut pass = true;

    let mut gae_err = 0.0f64;
    for _ in 0..200 {
        let t = rng.random_range(1..=64);
        let r: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..=t).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (g, l) = (rng.random_range(0.8..1.0), rng.random_range(0.0..1.0));
        let (adv, _) = compute_gae(&r, &v, &vec![false; t], g, l).unwrap();
        for s in 0..t {
            let brute: f64 = (s..t)
                .map(|k| (g * l).powi((k - s) as i32) * (r[k] + g * v[k + 1] - v[k]))
                .sum();
            gae_err = gae_err.max((adv[s] - brute).abs());
        }
    }
    pass &= gae_err <= 1e-10;
    notes.push(format!("GAE {gae_err:.1e}"));

    let (mq, sq, mp, sp) = (
        [0.3, -1.1, 0.8],
        [0.7, 1.4, 0.5],
        [-0.2, 0.4, 0.1],
        [1.2, 0.9, 0.8],
    );
    let kl = kl_diag_gaussian(&mq, &sq, &mp, &sp).unwrap();
    let log_n = |x: f64, m: f64, s: f64| {
        -0.5 * ((x - m) / s).powi(2) - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    };
    let n = 1_000_000;
    let mut acc = 0.0;
    for _ in 0..n {
        for d in 0..3 {
            let e: f64 = rng.sample(StandardNormal);
            let x = mq[d] + sq[d] * e;
            acc += log_n(x, mq[d], sq[d]) - log_n(x, mp[d], sp[d]);
        }
    }
    let kl_rel = (acc / n as f64 - kl).abs() / kl;
    pass &= kl_rel <= 0.01;
    notes.push(format!("KL MC {:.2}%", 100.0 * kl_rel));

    let mut exp_err = 0.0f64;
    for _ in 0..20 {
        let xs: Vec<f64> = (0..rng.random_range(2..30))
            .map(|_| rng.random_range(-3.0..3.0))
            .collect();
        let tau = rng.random_range(0.05..0.95);
        let obj = |e: f64| xs.iter().map(|x| expectile_loss(x - e, tau)).sum::<f64>();
        let best = (0..=60_000)
            .map(|i| -3.0 + 6.0 * i as f64 / 60_000.0)
            .min_by(|a, b| obj(*a).total_cmp(&obj(*b)))
            .unwrap();
        exp_err = exp_err.max((sample_expectile(&xs, tau) - best).abs());
    }
    pass &= exp_err <= 1e-3;
    notes.push(format!("expectile {exp_err:.1e}"));

    let sched = sample_session_schedule(40, 0.2, &mut rng).unwrap();
    let logits: Vec<f64> = (0..39).map(|_| rng.random_range(-6.0..6.0)).collect();
    let bce: f64 = logits
        .iter()
        .zip(&sched.switch_flags)
        .map(|(x, &y)| {
            let p = sig(*x);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / 39.0;
    let bce_err = (termination_loss(&logits, &sched).unwrap() - bce).abs();
    let z = normalize_advantages(&[1.0, 2.0, 3.0]);
    let sd = (2.0f64 / 3.0).sqrt() + 1e-8;
    let norm_err = z
        .iter()
        .zip([-1.0, 0.0, 1.0])
        .map(|(a, b)| (a - b / sd).abs())
        .fold(0.0, f64::max);
    let cos_err = (0..=100)
        .map(|s| {
            (cosine_lr(s, 100, 3e-4)
                - 3e-4 * 0.5 * (1.0 + (std::f64::consts::PI * s as f64 / 100.0).cos()))
            .abs()
        })
        .fold(0.0, f64::max);
    pass &= bce_err <= 1e-14 && norm_err <= 1e-15 && cos_err <= 1e-19;
    notes.push(format!(
        "BCE {bce_err:.0e}, normalize {norm_err:.0e}, cosine {cos_err:.0e}"
    ));

    let model = BeliefModel::new(
        BeliefArch {
            embed_size: 8,
            latent_dim: 5,
            ..Default::default()
        },
        3,
        2,
        false,
    );
    let mut params = model.init_params(&mut rng);
    let noise = Normal::new(0.0, 0.3).unwrap();
    params
        .as_mut_slice()
        .iter_mut()
        .for_each(|x| *x += noise.sample(&mut rng));
    let traj = dynamite::dlcmdp::Trajectory {
        env_name: "point-reacher".into(),
        switch_prob: 0.5,
        seed: 0,
        states: (0..4)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect(),
        actions: (0..3)
            .map(|_| {
                dynamite::dlcmdp::Action::Continuous(vec![
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ])
            })
            .collect(),
        rewards: (0..3).map(|_| rng.random_range(-1.0..0.0)).collect(),
        dones: vec![false, false, true],
        schedule: dynamite::dlcmdp::SessionSchedule::from_flags(vec![false, true]),
        latents: vec![vec![0.0; 2], vec![0.5; 2]],
    };
    let space = ActionSpace::Continuous {
        dim: 2,
        low: -1.0,
        high: 1.0,
    };
    let q = encode_trajectory(&params, &model, &traj, &space).unwrap();
    let mut h = vec![0.0; model.hidden_dim()];
    let mut enc_err = 0.0f64;
    for t in 0..=3 {
        let (a, r) = if t == 0 {
            (vec![0.0, 0.0], 0.0)
        } else {
            (space.encode(&traj.actions[t - 1]), traj.rewards[t - 1])
        };
        let (mu, sigma, term, h2) = oracle_encoder_step(&params, &h, &a, r, &traj.states[t]);
        let d = |x: &[f64], y: &[f64]| {
            x.iter()
                .zip(y)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        enc_err = enc_err
            .max(d(&mu, &q[t].mu))
            .max(d(&sigma, &q[t].sigma))
            .max((term - q[t].term_logit).abs())
            .max(d(&h2, &q[t].hidden));
        h = h2;
    }
    pass &= enc_err <= 1e-12;
    notes.push(format!("encoder unroll {enc_err:.0e}"));
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 300.0;
    notes.push(format!("{secs:.0}s (< 300s)"));
    outcome(pass, notes.join(", "))
}

// 3. Switch rate and first-session length law.
fn generative_process_criterion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pass = true;
    let mut notes = Vec::new();
    for (p, horizon) in [(0.01, 400usize), (0.02, 200), (0.07, 60)] {
        let n = 100_000;
        let mut switches = 0usize;
        let mut first_len = vec![0usize; horizon + 1];
        for _ in 0..n {
            let s = sample_session_schedule(horizon, p, &mut rng).unwrap();
            switches += s.num_switches();
            first_len[s.session_lengths()[0]] += 1;
        }
        let trials = (n * (horizon - 1)) as f64;
        let rate = switches as f64 / trials;
        let sigma = (p * (1.0 - p) / trials).sqrt();
        let rate_ok = (rate - p).abs() <= 3.0 * sigma;

        // P(L = k) = (1-p)^(k-1) p for k < T, P(L = T) = (1-p)^(T-1); bins are
        // merged from the left until each expects at least 5 draws.
        let prob = |k: usize| {
            if k < horizon {
                (1.0 - p).powi(k as i32 - 1) * p
            } else {
                (1.0 - p).powi(horizon as i32 - 1)
            }
        };
        let mut bins: Vec<(f64, f64)> = Vec::new();
        let (mut e, mut o) = (0.0, 0.0);
        for k in 1..=horizon {
            e += n as f64 * prob(k);
            o += first_len[k] as f64;
            if e >= 5.0 {
                bins.push((o, e));
                e = 0.0;
                o = 0.0;
            }
        }
        if let Some(last) = bins.last_mut() {
            last.0 += o;
            last.1 += e;
        }
        let chi2: f64 = bins.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
        let dof = (bins.len() - 1) as f64;
        let crit = ChiSquared::new(dof).unwrap().inverse_cdf(0.99);
        let law_ok = chi2 <= crit;
        pass &= rate_ok && law_ok;
        notes.push(format!(
            "p={p}: rate {rate:.5} ({:+.1} sigma), chi2 {chi2:.1} <= {crit:.1} on {dof} dof",
            (rate - p) / sigma
        ));
    }
    outcome(pass, notes.join("; "))
}

// 4. Method ordering on Gridworld.
const ORDERING_STEPS: u64 = 200_000;
const ORDERING_SEEDS: u64 = 10;

fn ordering_criterion() -> Outcome {
    let mut base = shipped_config("gridworld");
    base.total_steps = steps_override(ORDERING_STEPS);
    let seeds: Vec<u64> = (0..ORDERING_SEEDS).collect();
    let methods = [
        Method::Oracle,
        Method::Dynamite,
        Method::VaribadAblation,
        Method::Blind,
    ];
    let run = ordering_experiment(&base, &methods, &seeds, Exec::default(), |m, s, r| {
        eprintln!("  ordering: {} seed {s} return {r:.3}", m.name())
    })
    .expect("ordering experiment runs");
    let get = |m: Method| run.results.iter().find(|r| r.method == m).unwrap();
    let (o, d, v, b) = (
        get(Method::Oracle),
        get(Method::Dynamite),
        get(Method::VaribadAblation),
        get(Method::Blind),
    );
    let p_db = significance(d, b).unwrap();
    // Oracle may trail by at most two standard errors of the difference.
    let se = (o.sem().powi(2) + d.sem().powi(2)).sqrt();
    let oracle_ok = o.mean() >= d.mean() - 2.0 * se;
    let chain_ok = d.mean() >= v.mean() && v.mean() >= b.mean();
    let fmt = |r: &MethodResult| format!("{} {:.2}±{:.2}", r.method.name(), r.mean(), r.sem());
    outcome(
        oracle_ok && chain_ok && p_db < 0.05,
        format!(
            "{} seeds x {} steps: {}, {}, {}, {}; dynamite>blind p={p_db:.3}",
            seeds.len(),
            base.total_steps,
            fmt(o),
            fmt(d),
            fmt(v),
            fmt(b)
        ),
    )
}

// 5. Termination-head AUC.
fn auc_criterion() -> Outcome {
    let mut cfg = shipped_config("gridworld");
    cfg.total_steps = steps_override(ORDERING_STEPS);
    cfg.method = Method::Dynamite;
    let run = train_online(
        &cfg,
        Exec::default(),
        &mut dynamite::metrics::MemorySink::default(),
    )
    .unwrap();
    let auc = termination_auc(&run.agent, 60, 0.07, 100, 1_000, Exec::default()).unwrap();
    outcome(
        auc >= 0.8,
        format!("AUC {auc:.3} (>= 0.8) on 100 held-out episodes"),
    )
}

// 6. Transition decoder discrimination on WindyChain.
const DECODER_UPDATES: usize = 800;

fn decoder_criterion() -> Outcome {
    let mut cfg = shipped_config("windy-chain");
    cfg.horizon = Some(100);
    let r = decoder_discrimination(&cfg, 128, 20, DECODER_UPDATES, Exec::default()).unwrap();
    let ratio = r.conditioned_mse / r.blind_mse;
    outcome(
        ratio < 0.5,
        format!(
            "conditioned {:.3e} vs blind {:.3e}, ratio {ratio:.3} (< 0.5)",
            r.conditioned_mse, r.blind_mse
        ),
    )
}

// 7. Tabular IQL against value iteration, then IQL vs BC on Gridworld.
fn value_iteration(gamma: f64) -> [f64; 2] {
    let mut v = [0.0; 2];
    for _ in 0..10_000 {
        let mut next = [0.0; 2];
        for (s, n) in next.iter_mut().enumerate() {
            *n = (0..2)
                .map(|a| {
                    let (s2, r) = dynamite::experiments::two_state_step(s, a);
                    r + gamma * v[s2]
                })
                .fold(f64::NEG_INFINITY, f64::max);
        }
        v = next;
    }
    v
}

fn tabular_iql_config(tau: f64) -> IqlConfig {
    IqlConfig {
        expectile_tau: tau,
        awr_beta: 10.0,
        awr_weight_max: 100.0,
        gradient_steps: 20_000,
        batch_size: 64,
        actor_lr: 1e-2,
        critic_lr: 1e-2,
        hidden: vec![],
        target_update_rate: 0.005,
        gamma: 0.9,
        log_every: 1000,
    }
}

fn tabular_part() -> (bool, String) {
    let vi = value_iteration(0.9);
    let v = two_state_iql(&tabular_iql_config(0.99), 0, Exec::default()).unwrap();
    let rel = (0..2)
        .map(|s| (v[s] - vi[s]).abs() / vi[s].abs())
        .fold(0.0, f64::max);
    (
        rel <= 0.05,
        format!(
            "tabular V {:.3},{:.3} vs {:.3},{:.3} ({:.1}%)",
            v[0],
            v[1],
            vi[0],
            vi[1],
            100.0 * rel
        ),
    )
}

fn offline_criterion(full: bool) -> Option<Outcome> {
    let (tab_ok, tab) = tabular_part();
    if !full {
        return None;
    }
    let mut cfg = shipped_config("gridworld");
    cfg.total_steps = steps_override(ORDERING_STEPS);
    cfg.dataset_transitions = 100_000;
    let seeds: Vec<u64> = (0..5).collect();
    let r = offline_comparison(&cfg, &seeds, Exec::default()).unwrap();
    let p = mann_whitney(&r.iql, &r.bc).unwrap().p_greater;
    let ok = mean(&r.iql) > mean(&r.bc);
    Some(outcome(
        tab_ok && ok,
        format!(
            "{tab}; gridworld oracle data return {:.2}: IQL {:.3} vs BC {:.3} over 5 seeds (one-sided p={p:.3})",
            r.dataset_return,
            mean(&r.iql),
            mean(&r.bc)
        ),
    ))
}

fn tabular_only() -> Outcome {
    let (ok, s) = tabular_part();
    outcome(ok, s)
}

// 8. Shipped configs carry the published numbers.
fn provenance_criterion() -> Outcome {
    let mut bad = Vec::new();
    let mut check = |what: String, got: f64, want: f64| {
        if got != want {
            bad.push(format!("{what}: {got} != {want}"));
        }
    };
    let cols = [
        ("gridworld", &table1::GRIDWORLD, 0.07, 60.0, 5.0, 0.01, 8.0),
        (
            "point-reacher",
            &table1::REACHER,
            0.01,
            400.0,
            16.0,
            0.05,
            32.0,
        ),
        (
            "windy-chain",
            &table1::HALF_CHEETAH,
            0.01,
            400.0,
            16.0,
            0.05,
            32.0,
        ),
    ];
    for (env, col, p, h, latent, ent, embed) in cols {
        let c = shipped_config(env);
        check(format!("{env} switch_prob"), c.switch_prob.unwrap(), p);
        check(format!("{env} horizon"), c.horizon.unwrap() as f64, h);
        check(
            format!("{env} latent_dim"),
            c.latent_dim.unwrap() as f64,
            latent,
        );
        check(format!("{env} entropy_coef"), c.entropy_coef.unwrap(), ent);
        check(
            format!("{env} embed_size"),
            c.embed_size.unwrap() as f64,
            embed,
        );
        check(format!("{env} policy_lr"), c.policy_lr, 3e-4);
        check(format!("{env} vae_lr"), c.vae_lr, 3e-4);
        check(format!("{env} gamma"), c.gamma, 0.99);
        check(format!("{env} gae_lambda"), c.gae_lambda, 0.95);
        check(format!("{env} clip_eps"), c.clip_eps, 0.2);
        check(format!("{env} value_loss_coef"), c.value_loss_coef, 0.5);
        check(format!("{env} max_grad_norm"), c.max_grad_norm, 0.5);
        check(
            format!("{env} consistency_weight"),
            c.consistency_weight,
            0.5,
        );
        check(format!("{env} kl_weight"), c.kl_weight, 0.01);
        check(format!("{env} table p"), col.switch_prob, p);
        check(format!("{env} table horizon"), col.horizon as f64, h);
    }
    let s = &table1::SCRATCH_ITCH;
    check("scratch-itch p".into(), s.switch_prob, 0.02);
    check("scratch-itch horizon".into(), s.horizon as f64, 200.0);
    check("scratch-itch entropy".into(), s.entropy_coef, 0.1);
    check("scratch-itch latent".into(), s.latent_dim as f64, 16.0);
    check("scratch-itch embed".into(), s.embed_size as f64, 32.0);
    check(
        "gridworld workers".into(),
        shipped_config("gridworld").n_workers.unwrap() as f64,
        16.0,
    );
    let n = 3 * 16 + 6;
    if bad.is_empty() {
        outcome(
            true,
            format!("{n} values match across 3 shipped configs and the 4-column table"),
        )
    } else {
        outcome(false, bad.join("; "))
    }
}

// 9. Byte-identical metrics on rerun.
fn determinism_criterion() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(
        &cfg,
        "total_steps = 3000\ndataset_transitions = 2000\niql_gradient_steps = 150\nbelief_fit_updates = 10\neval_episodes = 10\n",
    )
    .unwrap();
    let run = |out: &str, cmd: &str, method: &str| -> Vec<u8> {
        let o = dir.path().join(out);
        let args = [
            "dynamite",
            cmd,
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "4",
            "--env",
            "gridworld",
            "--method",
            method,
            "--out",
            o.to_str().unwrap(),
        ];
        let (mut so, mut se) = (Vec::new(), Vec::new());
        let code = cli::run(args, &mut so, &mut se);
        assert_eq!(code, 0, "{}", String::from_utf8_lossy(&se));
        so
    };
    let mut same = Vec::new();
    for (cmd, method, file) in [
        (
            "train-online",
            "dynamite",
            "gridworld/dynamite/4/metrics.csv",
        ),
        (
            "train-online",
            "rl2-lite",
            "gridworld/rl2-lite/4/metrics.csv",
        ),
        ("train-offline", "dynamite", "gridworld/iql/4/metrics.csv"),
        (
            "train-offline",
            "dynamite",
            "gridworld/dataset/4/dataset.jsonl",
        ),
    ] {
        let _ = run("a", cmd, method);
        let _ = run("b", cmd, method);
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        same.push((file, !a.is_empty() && a == b));
    }
    let e1 = run("a", "eval", "dynamite");
    let e2 = run("a", "eval", "dynamite");
    same.push(("eval output", e1 == e2));
    let pass = same.iter().all(|(_, s)| *s);
    outcome(
        pass,
        same.iter()
            .map(|(f, s)| format!("{f} {}", if *s { "identical" } else { "DIFFERS" }))
            .collect::<Vec<_>>()
            .join(", "),
    )
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let full = args.iter().any(|a| a == "--full")
        || std::env::var("DYNAMITE_ACCEPTANCE").is_ok_and(|v| v == "full");
    let picked: Vec<u32> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: u32| picked.is_empty() || picked.contains(&n);
    let skip = |n: u32, what: &str| println!("criterion {n}: SKIPPED ({what}; run with --full)");
    let mut failed = 0;
    let report = |n: u32, o: Outcome| -> u32 {
        println!(
            "criterion {n}: {} {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        u32::from(!o.pass)
    };
    if wanted(1) {
        failed += report(1, gradient_suite_criterion());
    }
    if wanted(2) {
        failed += report(2, oracle_suite_criterion());
    }
    if wanted(3) {
        failed += report(3, generative_process_criterion());
    }
    if wanted(4) {
        if full {
            failed += report(4, ordering_criterion());
        } else {
            skip(4, "trains 40 agents");
        }
    }
    if wanted(5) {
        if full {
            failed += report(5, auc_criterion());
        } else {
            skip(5, "trains a Gridworld agent");
        }
    }
    if wanted(6) {
        if full {
            failed += report(6, decoder_criterion());
        } else {
            skip(6, "trains a WindyChain belief model");
        }
    }
    if wanted(7) {
        match offline_criterion(full) {
            Some(o) => failed += report(7, o),
            None => {
                let t = tabular_only();
                println!(
                    "criterion 7: SKIPPED (tabular part {}: {}; Gridworld IQL vs BC needs --full)",
                    if t.pass { "PASS" } else { "FAIL" },
                    t.detail
                );
                if !t.pass {
                    failed += 1;
                }
            }
        }
    }
    if wanted(8) {
        failed += report(8, provenance_criterion());
    }
    if wanted(9) {
        failed += report(9, determinism_criterion());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
