//! Artifact layout of a run directory.
//!
//! ```text
//! manifest.json             run id, resolved config, problem fingerprint
//! config.toml               resolved config; `run --config` on it reproduces the run
//! history.csv               one row per iteration, iteration 0 = initial population
//! summary.csv               totals: simulations, queries, retrainings, status
//! best.json                 lowest-cost design found
//! checkpoint.json           latest iteration boundary
//! checkpoints/iter-N.json   periodic snapshots
//! incidents.json            skipped evaluator failures (only when any occurred)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use specgate::config::RunConfig;

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const RESOLVED_CONFIG: &str = "config.toml";
pub const HISTORY: &str = "history.csv";
pub const SUMMARY: &str = "summary.csv";
pub const BEST: &str = "best.json";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const INCIDENTS: &str = "incidents.json";

pub const MANIFEST_FORMAT: &str = "specgate-run";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub run_id: String,
    pub config_path: PathBuf,
    pub artifact_dir: PathBuf,
    pub problem_fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resumed_from: Option<PathBuf>,
    /// Every setting with defaults filled in.
    pub config: RunConfig,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(CliError::Config(format!(
                "{}: unsupported manifest `{}` v{}",
                path.display(),
                m.format,
                m.version
            )));
        }
        Ok(m)
    }
}

/// Short content hash of the resolved config (which includes the seed).
pub fn run_id(config: &RunConfig) -> Result<String, CliError> {
    let text = config.to_toml()?;
    let digest = Sha256::digest(text.as_bytes());
    Ok(hex::encode(&digest[..6]))
}

/// Writes through a temporary file so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn checkpoint_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join(CHECKPOINT_DIR).join(format!("iter-{iteration:06}.json"))
}
