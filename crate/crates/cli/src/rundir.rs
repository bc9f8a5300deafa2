//! Layout of a run directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sambg_core::train::{ExperimentConfig, ModelState};
use serde::{Deserialize, Serialize};

pub const CONFIG: &str = "config.json";
pub const INDEX: &str = "run.json";
pub const METRICS: &str = "metrics.json";
pub const MODEL: &str = "model.json";
pub const LOG: &str = "train_log.csv";
pub const CHECKPOINTS: &str = "checkpoints";

/// One trained (seed, fold) model inside a run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub seed: u64,
    pub fold: usize,
    /// Paths relative to the run directory.
    pub model: String,
    pub log: String,
}

/// Everything needed to re-evaluate a run directory from its artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunIndex {
    pub command: String,
    pub variant: String,
    pub folds: usize,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunRecord>,
}

/// Read and validate a config; a relative manifest path resolves against the
/// config file's directory.
pub fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(m) = &cfg.data.manifest {
        let p = Path::new(m);
        if p.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            let joined = base.join(p);
            let resolved = fs::canonicalize(&joined).unwrap_or(joined);
            cfg.data.manifest = Some(resolved.display().to_string());
        }
    }
    Ok(cfg)
}

pub fn out_dir(out: Option<&Path>) -> Result<PathBuf> {
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_config(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    write_text(&dir.join(CONFIG), &cfg.to_json()?)
}

pub fn write_index(dir: &Path, index: &RunIndex) -> Result<()> {
    write_text(&dir.join(INDEX), &(serde_json::to_string_pretty(index)? + "\n"))
}

pub fn read_index(dir: &Path) -> Result<RunIndex> {
    let path = dir.join(INDEX);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_state(path: &Path, state: &ModelState) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(state.save(path)?)
}

/// Checkpoint writer for `every`-th epochs; a no-op when `every` is 0.
pub fn checkpointer(dir: &Path, every: usize) -> impl FnMut(&ModelState) -> sambg_core::Result<()> + '_ {
    move |state: &ModelState| {
        if every == 0 || state.epoch % every != 0 {
            return Ok(());
        }
        let stage = serde_json::to_value(state.stage)?;
        let name = format!("{}_epoch_{:04}.json", stage.as_str().unwrap_or("state"), state.epoch);
        let path = dir.join(CHECKPOINTS).join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        state.save(&path)
    }
}
