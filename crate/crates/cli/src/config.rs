//! JSON run configuration. Command-line flags override every field.

use std::path::Path;

use anyhow::{Context, Result};
use govprobe::experiments::ExperimentPlan;
use serde::Deserialize;

pub const CONFIG_ENV: &str = "GOVPROBE_CONFIG";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    /// Threshold for single-split commands (balance, train, eval, stats).
    pub dist_threshold: Option<usize>,
    /// Defaults for the experiment commands.
    pub plan: ExperimentPlan,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(govprobe::Error::from).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.plan.validate()?;
        Ok(cfg)
    }

    pub fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.seed).unwrap_or(self.plan.seed)
    }

    pub fn dist_threshold(&self, flag: Option<usize>) -> usize {
        flag.or(self.dist_threshold).unwrap_or(3)
    }
}
