//! JSON-Lines trajectory files: an episode header line followed by one
//! line per step.
//!
//! ```text
//! {"seed":7,"horizon":60,"p":0.07,"env_name":"gridworld","final_state":[..],"latents":[[..]]}
//! {"t":0,"s":[..],"a":3,"r":-0.1,"done":false,"session_id":0}
//! ```

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Action, SessionSchedule, Trajectory};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeHeader {
    pub seed: u64,
    pub horizon: usize,
    pub p: f64,
    pub env_name: String,
    /// State after the last step.
    pub final_state: Vec<f64>,
    /// Ground-truth context per session (evaluation only).
    pub latents: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub t: usize,
    pub s: Vec<f64>,
    pub a: Action,
    pub r: f64,
    pub done: bool,
    pub session_id: usize,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Line {
    Header(EpisodeHeader),
    Step(StepRecord),
}

pub fn trajectory_to_jsonl<W: Write>(traj: &Trajectory, out: &mut W) -> Result<()> {
    let header = EpisodeHeader {
        seed: traj.seed,
        horizon: traj.len(),
        p: traj.switch_prob,
        env_name: traj.env_name.clone(),
        final_state: traj.states.last().cloned().unwrap_or_default(),
        latents: traj.latents.clone(),
    };
    serde_json::to_writer(&mut *out, &header)?;
    out.write_all(b"\n")?;
    for t in 0..traj.len() {
        let rec = StepRecord {
            t,
            s: traj.states[t].clone(),
            a: traj.actions[t].clone(),
            r: traj.rewards[t],
            done: traj.dones[t],
            session_id: traj.schedule.session_ids[t],
        };
        serde_json::to_writer(&mut *out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_trajectories(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for t in trajs {
        trajectory_to_jsonl(t, &mut w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectories<R: BufRead>(reader: R, origin: &Path) -> Result<Vec<Trajectory>> {
    let fail = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut out = Vec::new();
    let mut current: Option<(EpisodeHeader, Vec<StepRecord>)> = None;
    let finish =
        |(h, steps): (EpisodeHeader, Vec<StepRecord>), line: usize| -> Result<Trajectory> {
            if steps.len() != h.horizon {
                return Err(fail(
                    line,
                    format!(
                        "episode declares {} steps but has {}",
                        h.horizon,
                        steps.len()
                    ),
                ));
            }
            let ids: Vec<usize> = steps.iter().map(|s| s.session_id).collect();
            let schedule =
                SessionSchedule::from_session_ids(ids).map_err(|e| fail(line, e.to_string()))?;
            let mut states: Vec<Vec<f64>> = steps.iter().map(|s| s.s.clone()).collect();
            states.push(h.final_state);
            let traj = Trajectory {
                env_name: h.env_name,
                switch_prob: h.p,
                seed: h.seed,
                states,
                actions: steps.iter().map(|s| s.a.clone()).collect(),
                rewards: steps.iter().map(|s| s.r).collect(),
                dones: steps.iter().map(|s| s.done).collect(),
                schedule,
                latents: h.latents,
            };
            traj.check().map_err(|e| fail(line, e.to_string()))?;
            Ok(traj)
        };
    let mut lineno = 0;
    for line in reader.lines() {
        lineno += 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| fail(lineno, e.to_string()))?;
        match parsed {
            Line::Header(h) => {
                if let Some(ep) = current.take() {
                    out.push(finish(ep, lineno)?);
                }
                current = Some((h, Vec::new()));
            }
            Line::Step(s) => {
                let (_, steps) = current
                    .as_mut()
                    .ok_or_else(|| fail(lineno, "step record before any episode header".into()))?;
                if s.t != steps.len() {
                    return Err(fail(
                        lineno,
                        format!("expected t = {}, found {}", steps.len(), s.t),
                    ));
                }
                steps.push(s);
            }
        }
    }
    if let Some(ep) = current.take() {
        out.push(finish(ep, lineno)?);
    }
    Ok(out)
}
