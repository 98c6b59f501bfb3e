//! Checkpoints: a JSON manifest naming every tensor and its shape, plus a
//! blob of little-endian f32 values in manifest order. The blob sits next to
//! the manifest with a `.bin` extension.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::ModelParams;
use crate::error::{Error, Result};

const FORMAT: &str = "subscore-mtl-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    seed: u64,
    config: ModelConfig,
    blob: String,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    /// Initialization seed of the run that produced the parameters.
    pub seed: u64,
}

pub fn save_checkpoint(path: &Path, params: &ModelParams<f32>, seed: u64) -> Result<()> {
    let blob_path = path.with_extension("bin");
    let blob_name = blob_path
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Config(format!("bad checkpoint path {}", path.display())))?
        .to_string();
    let mut offset = 0;
    let mut tensors = Vec::with_capacity(params.tensors.len());
    let mut blob = Vec::with_capacity(4 * params.param_count());
    for t in &params.tensors {
        tensors.push(TensorEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            offset,
        });
        offset += t.data.len();
        for x in &t.data {
            blob.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        seed,
        config: params.config.clone(),
        blob: blob_name,
        tensors,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
    fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: String| Error::Data(format!("{}: {m}", path.display()));
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(bad(format!(
            "unsupported checkpoint {} v{}",
            manifest.format, manifest.version
        )));
    }
    let blob_path = path.with_file_name(&manifest.blob);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if blob.len() % 4 != 0 {
        return Err(bad("blob length is not a multiple of 4".into()));
    }
    let values: Vec<f32> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let layout = super::params::Layout::new(&manifest.config);
    if manifest.tensors.len() != layout.len() {
        return Err(bad(format!(
            "{} tensors listed, config implies {}",
            manifest.tensors.len(),
            layout.len()
        )));
    }
    let mut data = Vec::with_capacity(layout.len());
    for (i, e) in manifest.tensors.iter().enumerate() {
        if e.name != layout.names[i] || e.shape != layout.shapes[i] {
            return Err(bad(format!(
                "tensor {i} is {} {:?}, expected {} {:?}",
                e.name, e.shape, layout.names[i], layout.shapes[i]
            )));
        }
        let n = layout.numel(i);
        let slice = values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| bad(format!("tensor {} runs past the blob", e.name)))?;
        data.push(slice.to_vec());
    }
    let params = ModelParams::from_data(manifest.config, data)?;
    Ok(Checkpoint {
        params,
        seed: manifest.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p: ModelParams<f32> = init_params(&ModelConfig::tiny(), 17).unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&path, &p, 17).unwrap();
        assert!(dir.path().join("model.bin").is_file());
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.seed, 17);
        assert_eq!(ck.params, p);
        let blob = fs::read(dir.path().join("model.bin")).unwrap();
        assert_eq!(blob.len(), 4 * ModelConfig::tiny().param_count());
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p: ModelParams<f32> = init_params(&ModelConfig::tiny(), 1).unwrap();
        let path = dir.path().join("m.json");
        save_checkpoint(&path, &p, 1).unwrap();
        let blob = fs::read(dir.path().join("m.bin")).unwrap();
        fs::write(dir.path().join("m.bin"), &blob[..blob.len() - 8]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
