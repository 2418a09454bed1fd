//! Single-file checkpoints: every named tensor as little-endian `f64` in a
//! safetensors archive, with the model configuration as JSON metadata.

use std::collections::HashMap;
use std::path::Path;

use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};

use crate::config::ModelConfig;
use crate::network::Network;
use crate::{ModelError, Result};

const CONFIG_KEY: &str = "model_config";

pub fn save(net: &Network, path: &Path) -> Result<()> {
    let named = net.params().to_named();
    let bytes: Vec<(String, Vec<u8>, Vec<usize>)> = named
        .iter()
        .map(|(n, t)| (n.clone(), t.iter().flat_map(|v| v.to_le_bytes()).collect(), t.shape().to_vec()))
        .collect();
    let views = bytes
        .iter()
        .map(|(n, b, s)| Ok((n.as_str(), TensorView::new(Dtype::F64, s.clone(), b).map_err(|e| ModelError::Checkpoint(e.to_string()))?)))
        .collect::<Result<Vec<_>>>()?;
    let meta = HashMap::from([(CONFIG_KEY.to_string(), serde_json::to_string(net.config())?)]);
    let out = safetensors::serialize(views, &Some(meta)).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| ModelError::Io { path: dir.to_path_buf(), source: e })?;
    }
    std::fs::write(path, out).map_err(|e| ModelError::Io { path: path.to_path_buf(), source: e })
}

/// The configuration stored in a checkpoint.
pub fn read_config(path: &Path) -> Result<ModelConfig> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::Io { path: path.to_path_buf(), source: e })?;
    config_of(&bytes, path)
}

fn config_of(bytes: &[u8], path: &Path) -> Result<ModelConfig> {
    let (_, meta) = SafeTensors::read_metadata(bytes).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
    let json = meta
        .metadata()
        .as_ref()
        .and_then(|m| m.get(CONFIG_KEY))
        .ok_or_else(|| ModelError::Checkpoint(format!("{}: no model configuration stored", path.display())))?;
    Ok(serde_json::from_str(json)?)
}

/// Load weights into a network built from `expected`; a checkpoint written
/// with any other configuration is rejected.
pub fn load(path: &Path, expected: &ModelConfig) -> Result<Network> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::Io { path: path.to_path_buf(), source: e })?;
    let stored = config_of(&bytes, path)?;
    if &stored != expected {
        return Err(ModelError::Checkpoint(format!(
            "{} was written for a different model configuration: stored {}, expected {}",
            path.display(),
            serde_json::to_string(&stored)?,
            serde_json::to_string(expected)?
        )));
    }
    let st = SafeTensors::deserialize(&bytes).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
    let mut net = Network::new(stored)?;
    let store = net.params_mut();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        let view = st.tensor(&name).map_err(|e| ModelError::Checkpoint(format!("{name}: {e}")))?;
        let target = store.get_mut(id);
        if view.dtype() != Dtype::F64 || view.shape() != target.shape() {
            return Err(ModelError::Checkpoint(format!("{name}: stored {:?} {:?}, expected F64 {:?}", view.dtype(), view.shape(), target.shape())));
        }
        for (dst, b) in target.iter_mut().zip(view.data().chunks_exact(8)) {
            *dst = f64::from_le_bytes(b.try_into().expect("8 bytes"));
        }
    }
    if st.len() != net.params().len() {
        return Err(ModelError::Checkpoint(format!("{}: {} tensors stored, model has {}", path.display(), st.len(), net.params().len())));
    }
    Ok(net)
}

/// Load using the configuration stored in the file.
pub fn load_any(path: &Path) -> Result<Network> {
    let cfg = read_config(path)?;
    load(path, &cfg)
}
