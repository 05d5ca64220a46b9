use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// `<crate version>-<git describe>` captured at build time.
pub fn build_id() -> String {
    format!(
        "{}-{}",
        env!("CARGO_PKG_VERSION"),
        env!("PARABLEU_BUILD_ID")
    )
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Everything needed to rerun a subcommand: `args` replayed through the CLI
/// reproduces the artifacts listed in `outputs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub args: Vec<String>,
    /// Fully resolved settings, including defaults.
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub build_id: String,
    /// Seconds since the Unix epoch.
    pub started_at: f64,
    pub finished_at: f64,
}

impl RunManifest {
    pub fn start(subcommand: &str, args: &[String], seed: u64) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            args: args.to_vec(),
            config: BTreeMap::new(),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            build_id: build_id(),
            started_at: now(),
            finished_at: 0.0,
        }
    }

    pub fn record_config(&mut self, kv: impl IntoIterator<Item = (String, String)>) {
        self.config.extend(kv);
    }

    pub fn finish(mut self, dir: &Path) -> Result<PathBuf> {
        self.finished_at = now();
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&self).map_err(|e| Error::Format(e.to_string()))?;
        crate::write_atomic(&path, json.as_bytes())?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}
