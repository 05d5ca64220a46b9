//! Desk-scale paraphrase representation learning: a small autodiff engine,
//! a bottleneck-conditioned edit encoder with its pretraining objective,
//! fine-tuning as a learned evaluation metric, classical text metrics,
//! correlation reporting and one-shot conditional generation.

pub mod checkpoint;
pub mod cli;
pub mod correlation;
pub mod data;
pub mod error;
pub mod finetune;
pub mod generation;
pub mod metrics;
pub mod model;
pub mod pretrain;
pub mod tensor;
pub mod text;

use std::path::Path;

pub use error::{Error, Result};

/// Parses one `key=value` setting, naming the key on failure.
pub fn parse_setting<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value {raw:?} for {key}")))
}

/// Writes `bytes` to a temporary sibling of `path`, then renames it into
/// place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
