//! Run configuration: defaults, overlaid by an optional JSON file, overlaid
//! by command-line flags. One seed drives every module.

use std::path::Path;

use ctl_core::classifier::FinetuneConfig;
use ctl_core::contrastive::PretrainConfig;
use ctl_core::lbp::LbpConfig;
use ctl_core::synth::CorpusConfig;
use ctl_core::vote::{VoteConfig, WindowConfig};
use serde::{Deserialize, Serialize};

use crate::error::{format_err, io_err, Result};
use crate::pnm::write_bytes;

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub subcommand: String,
    pub seed: u64,
    pub jobs: usize,
    pub split_ratio: f64,
    pub lbp: LbpConfig,
    pub corpus: CorpusConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub vote: VoteConfig,
    pub window: WindowConfig,
    pub paths: serde_json::Map<String, serde_json::Value>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            subcommand: String::new(),
            seed: 0,
            jobs: 1,
            split_ratio: 0.8,
            lbp: LbpConfig::default(),
            corpus: CorpusConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            vote: VoteConfig::default(),
            window: WindowConfig::default(),
            paths: serde_json::Map::new(),
        }
    }
}

impl RunConfig {
    /// Defaults, or the contents of `path` when given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(io_err(p))?;
                serde_json::from_str(&text).map_err(|e| format_err(p, e.to_string()))
            }
        }
    }

    /// Copy the top-level seed into every module config.
    pub fn propagate_seed(&mut self) {
        self.corpus.seed = self.seed;
        self.pretrain.seed = self.seed;
        self.finetune.seed = self.seed;
    }

    pub fn set_path(&mut self, key: &str, value: &Path) {
        self.paths.insert(key.into(), serde_json::Value::String(value.display().to_string()));
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Write `resolved_config.json` into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        write_bytes(&dir.join(RESOLVED_CONFIG_FILE), self.to_json()?.as_bytes())
    }
}

/// Directory that receives the resolved config for an output path: the path
/// itself when it is (or will be) a directory, otherwise its parent.
pub fn output_dir(out: &Path, is_dir: bool) -> &Path {
    if is_dir {
        out
    } else {
        out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_json_keeps_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"seed": 9, "lbp": {"radius": 2.0}}"#).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.lbp.radius, 2.0);
        assert_eq!(cfg.lbp.points, 32);
        assert_eq!(cfg.split_ratio, 0.8);
    }

    #[test]
    fn json_round_trip() {
        let mut cfg = RunConfig { seed: 3, ..RunConfig::default() };
        cfg.propagate_seed();
        let back: RunConfig = serde_json::from_str(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
