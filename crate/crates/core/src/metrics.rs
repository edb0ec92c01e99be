//! Run directories, metrics CSV files and the `run.json` manifest.

use std::fs::{File, OpenOptions};
use std::io::BufReader;
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Method, TrainConfig};
use crate::error::{Error, Result};
use crate::numerics::{save_checkpoint, ModelParams};

/// A CSV row type with a fixed column order.
pub trait CsvRow: Serialize + DeserializeOwned {
    const HEADER: &'static [&'static str];
}

/// One online training iteration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub env_steps: u64,
    pub mean_return: f64,
    pub recon_reward: f64,
    pub recon_state: f64,
    pub kl: f64,
    pub consistency: f64,
    pub termination: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub grad_norm: f64,
    pub wall_clock_s: Option<f64>,
}

impl CsvRow for MetricsRow {
    const HEADER: &'static [&'static str] = &[
        "iteration",
        "env_steps",
        "mean_return",
        "recon_reward",
        "recon_state",
        "kl",
        "consistency",
        "termination",
        "policy_loss",
        "value_loss",
        "entropy",
        "grad_norm",
        "wall_clock_s",
    ];
}

/// One logged block of offline gradient steps.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OfflineRow {
    pub step: usize,
    pub value_loss: f64,
    pub q_loss: f64,
    pub actor_loss: f64,
    pub actor_lr: f64,
    pub mean_weight: f64,
    pub wall_clock_s: Option<f64>,
}

impl CsvRow for OfflineRow {
    const HEADER: &'static [&'static str] = &[
        "step",
        "value_loss",
        "q_loss",
        "actor_loss",
        "actor_lr",
        "mean_weight",
        "wall_clock_s",
    ];
}

/// Appends rows to a CSV file, flushing after each one. The header is
/// written once, when the file is empty.
pub struct MetricsWriter<R: CsvRow> {
    path: PathBuf,
    inner: csv::Writer<File>,
    _row: PhantomData<R>,
}

impl<R: CsvRow> MetricsWriter<R> {
    /// Starts a fresh file, replacing any previous one.
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        Self::open(path, File::create(path)?)
    }

    /// Continues an existing file, or starts one.
    pub fn append(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Self::open(path, file)
    }

    fn open(path: &Path, file: File) -> Result<Self> {
        let empty = file.metadata()?.len() == 0;
        let mut w = Self {
            path: path.to_path_buf(),
            inner: csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(file),
            _row: PhantomData,
        };
        if empty {
            let r = w
                .inner
                .write_record(R::HEADER)
                .map_err(Error::from)
                .and_then(|_| Ok(w.inner.flush()?));
            w.guard(r)?;
        }
        Ok(w)
    }

    pub fn write(&mut self, row: &R) -> Result<()> {
        let r = self
            .inner
            .serialize(row)
            .map_err(Error::from)
            .and_then(|_| Ok(self.inner.flush()?));
        self.guard(r)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// On failure, leaves `<file>.partial` next to the CSV naming the error.
    fn guard(&self, r: Result<()>) -> Result<()> {
        if let Err(e) = &r {
            let mut marker = self.path.as_os_str().to_owned();
            marker.push(".partial");
            let _ = std::fs::write(PathBuf::from(marker), format!("{e}\n"));
        }
        r
    }
}

pub fn read_metrics<R: CsvRow>(path: &Path) -> Result<Vec<R>> {
    let mut rdr = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != R::HEADER {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("unexpected CSV header {header:?}"),
        });
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// `<out>/<env>/<method>/<seed>`
pub fn run_dir(out: &Path, env: &str, method: Method, seed: u64) -> PathBuf {
    out.join(env).join(method.name()).join(seed.to_string())
}

/// Content hash in git's object style (`blob <len>\0` prefix) over SHA-256.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(content_hash(&std::fs::read(path)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    /// Relative to the run directory.
    pub path: PathBuf,
    pub step: u64,
    pub hash: String,
}

/// `run.json`: everything needed to rerun, plus what the run produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: TrainConfig,
    pub metrics: PathBuf,
    pub checkpoints: Vec<CheckpointEntry>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join("run.json"), text + "\n")?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join("run.json"))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Receives what a trainer produces.
pub trait RunSink<R> {
    fn row(&mut self, row: &R) -> Result<()>;

    fn checkpoint(&mut self, name: &str, params: &ModelParams, step: u64) -> Result<()>;
}

/// Keeps rows in memory and drops checkpoints.
#[derive(Debug)]
pub struct MemorySink<R> {
    pub rows: Vec<R>,
}

impl<R> Default for MemorySink<R> {
    fn default() -> Self {
        Self { rows: Vec::new() }
    }
}

impl<R: Clone> RunSink<R> for MemorySink<R> {
    fn row(&mut self, row: &R) -> Result<()> {
        self.rows.push(row.clone());
        Ok(())
    }

    fn checkpoint(&mut self, _name: &str, _params: &ModelParams, _step: u64) -> Result<()> {
        Ok(())
    }
}

/// Writes a run directory: `metrics.csv`, `checkpoints/`, and `run.json`
/// on [`RunRecorder::finish`].
pub struct RunRecorder<R: CsvRow> {
    pub dir: PathBuf,
    writer: MetricsWriter<R>,
    checkpoints: Vec<CheckpointEntry>,
}

impl<R: CsvRow> RunRecorder<R> {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir.join("checkpoints"))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            writer: MetricsWriter::create(&dir.join("metrics.csv"))?,
            checkpoints: Vec::new(),
        })
    }

    pub fn checkpoints(&self) -> &[CheckpointEntry] {
        &self.checkpoints
    }

    pub fn finish(
        self,
        command: &str,
        config: &TrainConfig,
        notes: Vec<String>,
    ) -> Result<RunManifest> {
        let m = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            metrics: PathBuf::from("metrics.csv"),
            checkpoints: self.checkpoints,
            notes,
        };
        m.write(&self.dir)?;
        Ok(m)
    }
}

impl<R: CsvRow> RunSink<R> for RunRecorder<R> {
    fn row(&mut self, row: &R) -> Result<()> {
        self.writer.write(row)
    }

    fn checkpoint(&mut self, name: &str, params: &ModelParams, step: u64) -> Result<()> {
        let rel = PathBuf::from("checkpoints").join(format!("{name}.ckpt"));
        let path = self.dir.join(&rel);
        save_checkpoint(&path, params, step)?;
        let hash = file_hash(&path)?;
        self.checkpoints.retain(|c| c.name != name);
        self.checkpoints.push(CheckpointEntry {
            name: name.to_string(),
            path: rel,
            step,
            hash,
        });
        Ok(())
    }
}
