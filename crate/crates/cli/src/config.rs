//! Run configuration: JSON file merged with command-line flags.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use vidsplat_core::evaluate::EvalSettings;
use vidsplat_core::pipeline::{config_hash, SynthConfig};
use vidsplat_core::OptimConfig;

pub const SURROGATE: &str = "surrogate";
pub const DIR_SIDECAR: &str = "run_config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub optim: OptimConfig,
    pub eval: EvalSettings,
    pub held_out: EvalSettings,
    pub global_seed: u64,
    /// Views per frame kept for training, by even decimation; all if unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_views: Option<usize>,
    /// `surrogate` or the base URL of an embedding service.
    pub embedder: String,
    /// Not part of the hash: results do not depend on it.
    #[serde(skip)]
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            optim: OptimConfig::default(),
            eval: EvalSettings::default(),
            held_out: EvalSettings::held_out(128),
            global_seed: 0,
            train_views: None,
            embedder: SURROGATE.into(),
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// Written next to every output so `verify` can recompute the hash.
#[derive(Debug, Serialize, Deserialize)]
pub struct Sidecar {
    pub config_hash: String,
    pub config: RunConfig,
}

/// `dir/run_config.json` for directories, `file.run.json` for files.
pub fn sidecar_path(output: &Path) -> PathBuf {
    if output.is_dir() {
        output.join(DIR_SIDECAR)
    } else {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".run.json");
        output.with_file_name(name)
    }
}

pub fn write_sidecar(output: &Path, config: &RunConfig) -> anyhow::Result<()> {
    let side = Sidecar { config_hash: config.hash(), config: config.clone() };
    let path = sidecar_path(output);
    let mut text = serde_json::to_string_pretty(&side)?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_sidecar(output: &Path) -> anyhow::Result<Sidecar> {
    let path = sidecar_path(output);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
