//! The `train` command: runs the trainer and writes logs, checkpoints and a manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{create_dir, io_error, HarnessError, RunConfig, CODE_VERSION};
use crate::net::{encode_checkpoint, Network};
use crate::train::{train_loop, Control, EpisodeRecord, StopReason, TrainEvent, UpdateRecord};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EPISODES_FILE: &str = "episodes.csv";
pub const UPDATES_FILE: &str = "updates.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    seed: u64,
    config_hash: &'a str,
    code_version: &'a str,
    config: &'a RunConfig,
    result: Option<RunResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub stop: String,
    pub episodes: u64,
    pub updates: u64,
    /// Relative to the output directory.
    pub final_checkpoint: PathBuf,
}

/// What a finished `train` run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub output_dir: PathBuf,
    pub config_hash: String,
    pub result: RunResult,
}

impl TrainSummary {
    pub fn final_checkpoint(&self) -> PathBuf {
        self.output_dir.join(&self.result.final_checkpoint)
    }
}

fn stop_name(s: StopReason) -> &'static str {
    match s {
        StopReason::EpisodeBudget => "episode_budget",
        StopReason::SuccessThreshold => "success_threshold",
        StopReason::UpdateBudget => "update_budget",
        StopReason::Observer => "observer",
    }
}

/// CSV file whose first line carries the config hash.
struct CsvLog {
    path: PathBuf,
    header: &'static str,
    hash: String,
    out: Option<BufWriter<File>>,
}

impl CsvLog {
    fn new(path: PathBuf, header: &'static str, hash: &str) -> Self {
        Self {
            path,
            header,
            hash: hash.to_string(),
            out: None,
        }
    }

    /// Created on the first row so that empty runs leave no file behind.
    fn row(&mut self, line: &str) -> Result<(), HarnessError> {
        if self.out.is_none() {
            let f = File::create(&self.path).map_err(io_error(&self.path))?;
            let mut w = BufWriter::new(f);
            writeln!(w, "# config_hash={}\n{}", self.hash, self.header).map_err(io_error(&self.path))?;
            self.out = Some(w);
        }
        let w = self.out.as_mut().expect("opened above");
        writeln!(w, "{line}").map_err(io_error(&self.path))
    }

    fn finish(self) -> Result<(), HarnessError> {
        if let Some(mut w) = self.out {
            w.flush().map_err(io_error(&self.path))?;
        }
        Ok(())
    }
}

fn write_checkpoint(path: &Path, net: &Network<f32>, hash: &str, update: u64) -> Result<(), HarnessError> {
    let meta = format!("config_hash={hash};update={update}");
    fs::write(path, encode_checkpoint(net, &meta)).map_err(io_error(path))
}

fn write_manifest(dir: &Path, cfg: &RunConfig, hash: &str, result: Option<RunResult>) -> Result<(), HarnessError> {
    let m = Manifest {
        seed: cfg.seed,
        config_hash: hash,
        code_version: CODE_VERSION,
        config: cfg,
        result,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&m)?;
    fs::write(&path, text + "\n").map_err(io_error(&path))
}

fn checkpoint_name(update: u64) -> PathBuf {
    Path::new(CHECKPOINT_DIR).join(format!("update_{update:06}.ckpt"))
}

pub fn checkpoint_path(dir: &Path, update: u64) -> PathBuf {
    dir.join(checkpoint_name(update))
}

/// Trains according to `cfg`, writing into `output_dir` (or `cfg.output_dir`).
///
/// Files: `manifest.json`, `episodes.csv`, `updates.csv` and
/// `checkpoints/update_NNNNNN.ckpt`, where update 0 is the initial network.
pub fn cmd_train(cfg: &RunConfig, output_dir: Option<&Path>) -> Result<TrainSummary, HarnessError> {
    let setup = cfg.to_setup()?;
    let dir = output_dir.unwrap_or(&cfg.output_dir).to_path_buf();
    let hash = cfg.hash();
    create_dir(&dir.join(CHECKPOINT_DIR))?;
    write_manifest(&dir, cfg, &hash, None)?;
    write_checkpoint(&checkpoint_path(&dir, 0), &setup.initial_network()?, &hash, 0)?;

    let mut episodes = CsvLog::new(dir.join(EPISODES_FILE), EpisodeRecord::CSV_HEADER, &hash);
    let mut updates = CsvLog::new(dir.join(UPDATES_FILE), UpdateRecord::CSV_HEADER, &hash);
    let mut failure: Option<HarnessError> = None;
    let mut last_saved = 0;
    let mut observer = |ev: TrainEvent<'_>| {
        let r = match ev {
            TrainEvent::Episode(rec) => episodes.row(&rec.csv_row()),
            TrainEvent::Update { record, network } => updates.row(&record.csv_row()).and_then(|_| {
                if cfg.checkpoint_every > 0 && record.update % cfg.checkpoint_every == 0 {
                    last_saved = record.update;
                    write_checkpoint(&checkpoint_path(&dir, record.update), network, &hash, record.update)
                } else {
                    Ok(())
                }
            }),
        };
        match r {
            Ok(()) => Control::Continue,
            Err(e) => {
                failure = Some(e);
                Control::Stop
            }
        }
    };
    let result = train_loop(&setup, &mut observer)?;
    if let Some(e) = failure {
        return Err(e);
    }
    episodes.finish()?;
    updates.finish()?;
    let n_updates = result.updates.len() as u64;
    if n_updates > last_saved {
        write_checkpoint(&checkpoint_path(&dir, n_updates), &result.network, &hash, n_updates)?;
    }
    let run = RunResult {
        stop: stop_name(result.stop).into(),
        episodes: result.episodes.len() as u64,
        updates: n_updates,
        final_checkpoint: checkpoint_name(n_updates),
    };
    write_manifest(&dir, cfg, &hash, Some(run.clone()))?;
    Ok(TrainSummary {
        output_dir: dir,
        config_hash: hash,
        result: run,
    })
}
