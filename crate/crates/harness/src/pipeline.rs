//! End-to-end steps shared by the CLI and the tests.

use std::path::{Path, PathBuf};

use hossnet_core::container::write_sequence;
use hossnet_model::{checkpoint, Network};

use crate::data::{Dataset, Experiment};
use crate::evaluate::{evaluate, SampleEvaluation};
use crate::manifest::RunManifest;
use crate::report::{write_report, ReportFiles};
use crate::{HarnessError, Result};

/// Accept a run directory or a path to its `manifest.json`.
pub fn manifest_path(run: &Path) -> PathBuf {
    if run.is_dir() {
        run.join("manifest.json")
    } else {
        run.to_path_buf()
    }
}

/// Reload the experiment a run was trained on, with its normalization, and its best network.
pub fn load_run(run: &Path) -> Result<(RunManifest, Experiment, Network)> {
    let mpath = manifest_path(run);
    let manifest = RunManifest::load(&mpath)?;
    let ds = Dataset::load(&manifest.config.data.resolved_root())?;
    let hash = ds.hash();
    if hash != manifest.dataset_hash {
        return Err(HarnessError::Data(format!(
            "dataset at {} hashes to {hash}, the run was trained on {}",
            manifest.config.data.resolved_root().display(),
            manifest.dataset_hash
        )));
    }
    let exp = Experiment::prepare_with(&manifest.config, &ds, Some(manifest.normalization.clone()))?;
    if exp.split != manifest.split {
        return Err(HarnessError::Split("recomputed split differs from the one recorded in the manifest".into()));
    }
    let net = checkpoint::load_any(&manifest.resolve(&mpath, &manifest.checkpoint))?;
    Ok((manifest, exp, net))
}

/// Evaluate a trained run and write its report into `out` (default `<run>/eval`).
pub fn evaluate_run(run: &Path, out: Option<&Path>, positive_direction: Option<bool>) -> Result<(Vec<SampleEvaluation>, ReportFiles)> {
    let (manifest, exp, net) = load_run(run)?;
    let positive = positive_direction.unwrap_or(manifest.config.positive_direction);
    let evals = evaluate(&exp, &net, net.config().window_length, positive)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| manifest_path(run).parent().unwrap_or(Path::new(".")).join("eval"));
    let files = write_report(&dir, &manifest.run_name, &evals, &exp.config.eval)?;
    Ok((evals, files))
}

/// Write the post-processed test predictions of a run as dataset sequences in `out`.
pub fn predict_run(run: &Path, out: &Path, positive_direction: Option<bool>) -> Result<Vec<PathBuf>> {
    let (manifest, exp, net) = load_run(run)?;
    let positive = positive_direction.unwrap_or(manifest.config.positive_direction);
    let evals = evaluate(&exp, &net, net.config().window_length, positive)?;
    evals.iter().map(|e| Ok(write_sequence(out, &e.prediction, None)?)).collect()
}
