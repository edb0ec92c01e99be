//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::config::{load_config, Method, TrainConfig};
use crate::diagnostics::{gradient_suite, SUITE_TOLERANCE};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::iql::{collect_offline_dataset, evaluate_offline, train_offline, OfflineDataset};
use crate::metrics::{file_hash, run_dir, MetricsRow, OfflineRow, RunManifest, RunRecorder};
use crate::numerics::load_checkpoint;
use crate::ppo::{evaluate, train_online, ActMode, Agent};
use crate::stats::{mean, std_dev};

/// Probed coordinates per loss in `grad-check`.
pub const GRAD_CHECK_PROBES: usize = 64;

#[derive(Debug, Parser)]
#[command(
    name = "dynamite",
    version,
    about = "Session-aware meta-RL experiments",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a policy online with PPO; writes <out>/<env>/<method>/<seed>/.
    TrainOnline(Common),
    /// Roll out an oracle policy into a JSON Lines dataset (trains the oracle if needed).
    CollectDataset(Common),
    /// Train IQL (or behavior cloning when awr_beta = 0) on a dataset.
    TrainOffline(Common),
    /// Mean and standard deviation of the return of a trained run.
    Eval(Common),
    /// Compare every analytic gradient with finite differences.
    GradCheck(Common),
    /// Collect metrics.csv files under --out into one long-format CSV per metric.
    PlotData(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML or JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// gridworld, point-reacher or windy-chain.
    #[arg(long)]
    env: Option<String>,
    /// dynamite, varibad-ablation, rl2-lite, oracle or blind.
    #[arg(long)]
    method: Option<String>,
    /// Root of the run directories (default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Online: environment steps. collect-dataset: transitions. train-offline: gradient steps.
    #[arg(long)]
    steps: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum StepsMean {
    Online,
    Transitions,
    Gradient,
}

impl Common {
    fn config(&self, steps: StepsMean) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(p) => load_config(p)?,
            None => TrainConfig::default(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(e) = &self.env {
            c.env = e.clone();
        }
        if let Some(m) = &self.method {
            c.method = Method::parse(m)?;
        }
        if let Some(o) = &self.out {
            c.out = o.clone();
        }
        if let Some(n) = self.steps {
            match steps {
                StepsMean::Online => c.total_steps = n,
                StepsMean::Transitions => c.dataset_transitions = n as usize,
                StepsMean::Gradient => c.iql_gradient_steps = n as usize,
            }
        }
        c.resolved()
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    2
                }
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<i32> {
    let exec = Exec::default();
    match cmd {
        Command::TrainOnline(a) => {
            let cfg = a.config(StepsMean::Online)?;
            let dir = train_online_run(&cfg, exec)?;
            let m: Vec<MetricsRow> = crate::metrics::read_metrics(&dir.join("metrics.csv"))?;
            let last = m.last().map(|r| r.mean_return).unwrap_or(f64::NAN);
            writeln!(
                out,
                "{}: {} iterations, last mean return {last:.3}",
                dir.display(),
                m.len()
            )?;
        }
        Command::CollectDataset(a) => {
            let cfg = a.config(StepsMean::Transitions)?;
            let path = collect(&cfg, exec)?;
            writeln!(out, "{}", path.display())?;
        }
        Command::TrainOffline(a) => {
            let cfg = a.config(StepsMean::Gradient)?;
            let (dir, returns) = train_offline_run(&cfg, exec)?;
            writeln!(
                out,
                "{}: return {:.3} ± {:.3} over {} episodes",
                dir.display(),
                mean(&returns),
                std_dev(&returns),
                returns.len()
            )?;
        }
        Command::Eval(a) => {
            let cfg = a.config(StepsMean::Online)?;
            let returns = eval_run(&cfg, exec)?;
            writeln!(
                out,
                "{} {} seed {}: return {:.3} ± {:.3} over {} episodes",
                cfg.env,
                cfg.method.name(),
                cfg.seed,
                mean(&returns),
                std_dev(&returns),
                returns.len()
            )?;
        }
        Command::GradCheck(a) => {
            let cfg = a.config(StepsMean::Online)?;
            let checks = gradient_suite(&cfg.env, cfg.seed, GRAD_CHECK_PROBES)?;
            let mut ok = true;
            for c in &checks {
                ok &= c.passed();
                writeln!(
                    out,
                    "{:<22} max_rel_error {:.3e} over {} coordinates {}",
                    c.loss,
                    c.report.max_rel_error,
                    c.report.probes,
                    if c.passed() { "ok" } else { "FAIL" }
                )?;
            }
            writeln!(
                out,
                "tolerance {SUITE_TOLERANCE:e}: {}",
                if ok { "all passed" } else { "failed" }
            )?;
            return Ok(if ok { 0 } else { 1 });
        }
        Command::PlotData(a) => {
            let cfg = a.config(StepsMean::Online)?;
            for p in plot_data(&cfg.out)? {
                writeln!(out, "{}", p.display())?;
            }
        }
    }
    Ok(0)
}

/// Trains and records one online run; returns its directory.
pub fn train_online_run(cfg: &TrainConfig, exec: Exec) -> Result<PathBuf> {
    let dir = run_dir(&cfg.out, &cfg.env, cfg.method, cfg.seed);
    let mut rec = RunRecorder::<MetricsRow>::create(&dir)?;
    let run = train_online(cfg, exec, &mut rec)?;
    let notes = vec![format!(
        "first-minibatch |ratio - 1| max {:e}",
        run.first_minibatch_ratio_deviation
    )];
    rec.finish("train-online", cfg, notes)?;
    Ok(dir)
}

/// Agent stored in the run directory of `cfg`.
pub fn load_agent(cfg: &TrainConfig) -> Result<Agent> {
    let dir = run_dir(&cfg.out, &cfg.env, cfg.method, cfg.seed);
    let ckpt = dir.join("checkpoints");
    let policy = ckpt.join("policy.ckpt");
    if !policy.exists() {
        return Err(Error::invalid(format!(
            "no trained policy at {}; run train-online first",
            policy.display()
        )));
    }
    let run_cfg = RunManifest::read(&dir)
        .map(|m| m.config)
        .unwrap_or_else(|_| cfg.clone());
    let (agent, _) = Agent::new(&run_cfg)?;
    let belief = match agent.belief {
        Some(_) => Some(load_checkpoint(&ckpt.join("belief.ckpt"))?.0),
        None => None,
    };
    agent.with_weights(load_checkpoint(&policy)?.0, belief)
}

fn eval_run(cfg: &TrainConfig, exec: Exec) -> Result<Vec<f64>> {
    let agent = load_agent(cfg)?;
    evaluate(
        &agent,
        cfg.resolved_horizon()?,
        cfg.resolved_switch_prob()?,
        cfg.eval_episodes,
        cfg.seed,
        ActMode::Sample,
        exec,
    )
}

/// `<out>/<env>/dataset/<seed>/dataset.jsonl` unless the config names one.
pub fn dataset_path(cfg: &TrainConfig) -> PathBuf {
    cfg.dataset.clone().unwrap_or_else(|| {
        cfg.out
            .join(&cfg.env)
            .join("dataset")
            .join(cfg.seed.to_string())
            .join("dataset.jsonl")
    })
}

/// Collects a dataset with the configured oracle checkpoint, else the
/// oracle run of the same seed under `out`, training one if there is none.
pub fn collect(cfg: &TrainConfig, exec: Exec) -> Result<PathBuf> {
    let oracle_cfg = TrainConfig {
        method: Method::Oracle,
        ..cfg.clone()
    };
    let trained = run_dir(&cfg.out, &cfg.env, Method::Oracle, cfg.seed)
        .join("checkpoints")
        .join("policy.ckpt");
    let ckpt = match &cfg.oracle_checkpoint {
        Some(p) => p.clone(),
        None if trained.exists() => trained,
        None => train_online_run(&oracle_cfg, exec)?
            .join("checkpoints")
            .join("policy.ckpt"),
    };
    let (agent, _) = Agent::new(&oracle_cfg)?;
    let agent = agent.with_weights(load_checkpoint(&ckpt)?.0, None)?;
    let mut ds = collect_offline_dataset(
        &agent,
        cfg.resolved_horizon()?,
        cfg.resolved_switch_prob()?,
        cfg.dataset_transitions,
        cfg.seed,
        cfg.oracle_return_threshold,
        Some(file_hash(&ckpt)?),
        exec,
    )?;
    let path = dataset_path(cfg);
    ds.save(&path)?;
    Ok(path)
}

/// `iql`, or `bc` for the unweighted ablation.
pub fn offline_label(cfg: &TrainConfig) -> &'static str {
    if cfg.awr_beta == 0.0 {
        "bc"
    } else {
        "iql"
    }
}

/// Trains one offline run (collecting its dataset if absent) and evaluates
/// it greedily; returns the run directory and the evaluation returns.
pub fn train_offline_run(cfg: &TrainConfig, exec: Exec) -> Result<(PathBuf, Vec<f64>)> {
    let path = dataset_path(cfg);
    if !path.exists() {
        collect(cfg, exec)?;
    }
    let ds = OfflineDataset::load(&path)?;
    let dir = cfg
        .out
        .join(&ds.manifest.env)
        .join(offline_label(cfg))
        .join(cfg.seed.to_string());
    let mut rec = RunRecorder::<OfflineRow>::create(&dir)?;
    let run = train_offline(&ds, cfg, cfg.seed, exec, &mut rec)?;
    let returns = evaluate_offline(
        &run,
        &ds.manifest.env,
        ds.manifest.horizon,
        ds.manifest.switch_prob,
        cfg.eval_episodes,
        cfg.seed,
        ActMode::Greedy,
        exec,
    )?;
    let notes = vec![
        format!("dataset {} ({})", path.display(), ds.manifest.data_hash),
        format!(
            "greedy evaluation over {} episodes: {:.6} ± {:.6}",
            returns.len(),
            mean(&returns),
            std_dev(&returns)
        ),
    ];
    rec.finish("train-offline", cfg, notes)?;
    Ok((dir, returns))
}

fn find_metrics(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_metrics(&p, found)?;
        } else if p.file_name().is_some_and(|n| n == "metrics.csv") {
            found.push(p);
        }
    }
    Ok(())
}

/// Writes `<out>/plots/<metric>.csv` with columns
/// `env,method,seed,x,value` for every metrics file under `out`, where `x`
/// is environment steps for online runs and gradient steps for offline ones.
pub fn plot_data(out: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    find_metrics(out, &mut files)?;
    let plots = out.join("plots");
    let mut series: std::collections::BTreeMap<String, Vec<[String; 5]>> = Default::default();
    for f in files.iter().filter(|f| !f.starts_with(&plots)) {
        let rel = f.strip_prefix(out).unwrap_or(f);
        let parts: Vec<String> = rel
            .iter()
            .map(|s| s.to_string_lossy().into_owned())
            .collect();
        if parts.len() < 4 {
            continue;
        }
        let (env, method, seed) = (
            &parts[parts.len() - 4],
            &parts[parts.len() - 3],
            &parts[parts.len() - 2],
        );
        let mut rdr = csv::Reader::from_path(f)?;
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let x_col = if header.first().is_some_and(|h| h == "iteration") {
            "env_steps"
        } else {
            "step"
        };
        let xi = header
            .iter()
            .position(|h| h == x_col)
            .ok_or_else(|| Error::Format {
                path: f.clone(),
                message: format!("no `{x_col}` column"),
            })?;
        for rec in rdr.records() {
            let rec = rec?;
            for (i, name) in header.iter().enumerate() {
                if i == xi || name == "iteration" || name == "step" || rec[i].is_empty() {
                    continue;
                }
                series.entry(name.clone()).or_default().push([
                    env.clone(),
                    method.clone(),
                    seed.clone(),
                    rec[xi].to_string(),
                    rec[i].to_string(),
                ]);
            }
        }
    }
    std::fs::create_dir_all(&plots)?;
    let mut written = Vec::new();
    for (metric, rows) in series {
        let path = plots.join(format!("{metric}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["env", "method", "seed", "x", "value"])?;
        for r in rows {
            w.write_record(&r)?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}
