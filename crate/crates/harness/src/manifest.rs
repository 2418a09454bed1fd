//! The JSON record of one training run.

use std::path::{Path, PathBuf};
use std::process::Command;

use hossnet_model::LossReport;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::Normalization;
use crate::splits::Split;
use crate::{io_err, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_name: String,
    pub config: ExperimentConfig,
    pub source_revision: String,
    pub dataset_hash: String,
    pub normalization: Normalization,
    pub split: Split,
    pub wall_clock_seconds: f64,
    pub epochs_run: usize,
    pub optimizer_steps: u64,
    /// Training loss of the last epoch.
    pub final_loss: LossReport,
    pub best_epoch: usize,
    /// Validation total at the best epoch, or the training total without validation windows.
    pub best_score: f64,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Resolve `checkpoint` and `history` against the manifest's directory when relative.
    pub fn resolve(&self, manifest_path: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() || p.exists() {
            p.to_path_buf()
        } else {
            manifest_path.parent().map(|d| d.join(p.file_name().unwrap_or(p.as_os_str()))).unwrap_or_else(|| p.to_path_buf())
        }
    }
}

/// Crate version plus the git commit of the source tree, when available.
pub fn source_revision() -> String {
    let dir = env!("CARGO_MANIFEST_DIR");
    let rev = Command::new("git")
        .args(["-C", dir, "rev-parse", "--short=12", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string());
    let dirty = Command::new("git")
        .args(["-C", dir, "status", "--porcelain", "--untracked-files=no"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .is_some_and(|o| !o.stdout.is_empty());
    match rev {
        Some(r) => format!("{} {r}{}", env!("CARGO_PKG_VERSION"), if dirty { "-dirty" } else { "" }),
        None => format!("{} (no git revision)", env!("CARGO_PKG_VERSION")),
    }
}
