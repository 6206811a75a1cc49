//! Model checkpoints: a JSON manifest next to a raw little-endian `f32`
//! parameter blob (`<manifest stem>.bin`). Each parameterised layer stores
//! its weights followed by its biases, in layer order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::layers::{Layer, LayerSpec};
use super::registry::Architecture;
use super::Model;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    #[serde(flatten)]
    pub spec: LayerSpec,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: u32,
    pub architecture: Option<Architecture>,
    pub input_dim: usize,
    pub classes: usize,
    pub seed: u64,
    pub param_count: usize,
    pub blob: String,
    pub layers: Vec<LayerEntry>,
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let blob = blob_path(path);
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT,
        architecture: model.architecture(),
        input_dim: model.input_dim(),
        classes: model.classes(),
        seed: model.seed(),
        param_count: model.param_count(),
        blob: blob
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        layers: model
            .layers()
            .iter()
            .map(|l| LayerEntry {
                spec: l.spec,
                frozen: l.frozen,
            })
            .collect(),
    };
    let mut bytes = Vec::with_capacity(model.param_count() * 4);
    for layer in model.layers() {
        for v in layer.weight.iter().chain(&layer.bias) {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let json = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(path, json).map_err(|e| Error::io(path, e))?;
    std::fs::write(&blob, bytes).map_err(|e| Error::io(&blob, e))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::format(
            path,
            format!("unsupported checkpoint format {}", manifest.format),
        ));
    }
    let blob = path.with_file_name(&manifest.blob);
    let bytes = std::fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
    if bytes.len() != manifest.param_count * 4 {
        return Err(Error::format(
            &blob,
            format!(
                "expected {} parameters, found {} bytes",
                manifest.param_count,
                bytes.len()
            ),
        ));
    }
    let mut values = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])));
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for entry in &manifest.layers {
        let mut layer = Layer::new(entry.spec);
        layer.frozen = entry.frozen;
        for v in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
            *v = values
                .next()
                .ok_or_else(|| Error::format(&blob, "parameter blob is too short"))?;
        }
        layers.push(layer);
    }
    if values.next().is_some() {
        return Err(Error::format(
            &blob,
            "parameter blob is longer than the layers need",
        ));
    }
    let model = Model::from_layers(manifest.input_dim, layers)?;
    if model.classes() != manifest.classes {
        return Err(Error::format(
            path,
            "class count disagrees with the layer stack",
        ));
    }
    Ok(match manifest.architecture {
        Some(arch) => model.with_meta(arch, manifest.seed),
        None => model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapped_model_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        for arch in Architecture::ALL {
            let mut m = arch.build(512, 3, 7).unwrap();
            m.snap_to_f32();
            let path = dir.path().join(format!("{arch}.json"));
            save_checkpoint(&m, &path).unwrap();
            let back = load_checkpoint(&path).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.fingerprint(), m.fingerprint());
        }
    }

    #[test]
    fn truncated_blob_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let m = Architecture::Linear.build(16, 2, 0).unwrap();
        let path = dir.path().join("m.json");
        save_checkpoint(&m, &path).unwrap();
        let blob = dir.path().join("m.bin");
        let bytes = std::fs::read(&blob).unwrap();
        std::fs::write(&blob, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
    }
}
