use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;
use ran_core::corpus::TemplateConfig;
use ran_core::datrn::DatrnConfig;
use ran_core::dmp::GaConfig;
use ran_core::executor::EpisodeConfig;
use ran_core::seqmodel::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Every tunable default, overridable from a `--config` JSON file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub train: TrainConfig,
    pub datrn: DatrnConfig,
    pub ga: GaConfig,
    pub episode: EpisodeConfig,
    pub templates: TemplateConfig,
}

impl Config {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Config> {
        let Some(path) = path else { return Ok(Config::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Replaces every seed with `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.datrn.seed = seed;
        self.ga.seed = seed;
        self.episode.seed = seed;
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub command: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    pub config_hash: String,
    pub results: serde_json::Value,
}

impl RunReport {
    pub fn new(command: Vec<String>, cfg: &Config, results: serde_json::Value) -> Self {
        let seeds = BTreeMap::from([
            ("train".to_string(), cfg.train.seed),
            ("datrn".to_string(), cfg.datrn.seed),
            ("ga".to_string(), cfg.ga.seed),
            ("episode".to_string(), cfg.episode.seed),
        ]);
        RunReport {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command,
            seeds,
            config_hash: cfg.hash(),
            results,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn read(path: &Path) -> anyhow::Result<RunReport> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}
