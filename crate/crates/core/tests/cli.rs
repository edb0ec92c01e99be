use std::path::Path;
use std::process::{Command, Output};

fn dynamite(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynamite"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("small.toml");
    std::fs::write(
        &p,
        "total_steps = 1200\nn_workers = 2\nhorizon = 30\ndataset_transitions = 600\niql_gradient_steps = 60\nbelief_fit_updates = 4\neval_episodes = 4\n",
    )
    .unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn usage_errors_exit_with_two() {
    let none = dynamite(&[]);
    assert_eq!(none.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&none.stderr).contains("Usage"));
    assert_eq!(dynamite(&["fly-to-moon"]).status.code(), Some(2));
    assert_eq!(
        dynamite(&["train-online", "--steps", "many"]).status.code(),
        Some(2)
    );
    assert_eq!(dynamite(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_inputs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let r = dynamite(&["train-online", "--env", "cheetah", "--out", out]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("cheetah"));
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "totl_steps = 5\n").unwrap();
    let r = dynamite(&[
        "train-online",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out,
    ]);
    assert_eq!(r.status.code(), Some(1));
    let r = dynamite(&["eval", "--out", out, "--seed", "99"]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn train_eval_and_plot_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("runs");
    let out_s = out.to_str().unwrap();
    for seed in ["0", "1"] {
        let r = dynamite(&[
            "train-online",
            "--config",
            &cfg,
            "--env",
            "windy-chain",
            "--seed",
            seed,
            "--out",
            out_s,
        ]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    let run = out.join("windy-chain/dynamite/0");
    for f in [
        "metrics.csv",
        "run.json",
        "checkpoints/policy.ckpt",
        "checkpoints/belief.ckpt",
    ] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("run.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["env"], "windy-chain");

    let e = dynamite(&[
        "eval",
        "--config",
        &cfg,
        "--env",
        "windy-chain",
        "--seed",
        "0",
        "--out",
        out_s,
    ]);
    assert!(e.status.success(), "{}", String::from_utf8_lossy(&e.stderr));
    let text = String::from_utf8(e.stdout).unwrap();
    assert!(
        text.contains("return") && text.contains("over 4 episodes"),
        "{text}"
    );

    let p = dynamite(&["plot-data", "--out", out_s]);
    assert!(p.status.success());
    let csv = std::fs::read_to_string(out.join("plots/mean_return.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("env,method,seed,x,value"));
    let rows: Vec<&str> = lines.collect();
    assert!(rows
        .iter()
        .any(|l| l.starts_with("windy-chain,dynamite,0,")));
    assert!(rows
        .iter()
        .any(|l| l.starts_with("windy-chain,dynamite,1,")));
}

#[test]
fn offline_pipeline_writes_dataset_and_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("runs");
    let out_s = out.to_str().unwrap();
    let r = dynamite(&[
        "collect-dataset",
        "--config",
        &cfg,
        "--env",
        "gridworld",
        "--out",
        out_s,
        "--steps",
        "90",
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let data = out.join("gridworld/dataset/0/dataset.jsonl");
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("gridworld/dataset/0/dataset.jsonl.manifest.json"))
            .unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["n_transitions"], 90);
    let first = std::fs::read_to_string(&data).unwrap();
    let r = dynamite(&[
        "train-offline",
        "--config",
        &cfg,
        "--env",
        "gridworld",
        "--out",
        out_s,
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(
        std::fs::read_to_string(&data).unwrap(),
        first,
        "existing dataset reused"
    );
    assert!(out.join("gridworld/iql/0/metrics.csv").is_file());
    assert!(out.join("gridworld/iql/0/run.json").is_file());
}

#[test]
fn grad_check_passes_on_windy_chain() {
    let r = dynamite(&["grad-check", "--env", "windy-chain"]);
    let text = String::from_utf8_lossy(&r.stdout);
    assert_eq!(r.status.code(), Some(0), "{text}");
    assert!(text.contains("all passed"));
    assert!(
        text.lines().filter(|l| l.contains(" ok")).count() >= 9,
        "{text}"
    );
}
