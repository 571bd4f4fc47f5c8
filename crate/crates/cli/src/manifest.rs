use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use erc_core::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliResult;

/// Everything needed to repeat a command exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Command-specific arguments as given.
    pub arguments: BTreeMap<String, String>,
    pub config: Option<TrainConfig>,
    pub config_fingerprint: Option<String>,
    pub corpus: Option<PathBuf>,
    pub corpus_fingerprint: Option<String>,
    pub seed: Option<u64>,
    pub artifacts: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            arguments: BTreeMap::new(),
            config: None,
            config_fingerprint: None,
            corpus: None,
            corpus_fingerprint: None,
            seed: None,
            artifacts: Vec::new(),
        }
    }

    pub fn arg(mut self, key: &str, value: impl ToString) -> Self {
        self.arguments.insert(key.to_string(), value.to_string());
        self
    }

    pub fn with_config(mut self, config: &TrainConfig) -> Self {
        self.config_fingerprint = Some(config.fingerprint());
        self.seed = Some(config.seed);
        self.config = Some(config.clone());
        self
    }

    pub fn with_corpus(mut self, path: &Path, fingerprint: &str) -> Self {
        self.corpus = Some(path.to_path_buf());
        self.corpus_fingerprint = Some(fingerprint.to_string());
        self
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let mut bytes = serde_json::to_vec_pretty(self).map_err(erc_core::ErcError::from)?;
        bytes.push(b'\n');
        std::fs::write(path, bytes).map_err(erc_core::ErcError::from)?;
        Ok(())
    }
}
