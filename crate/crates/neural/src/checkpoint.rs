//! Checkpoint directories: `manifest.json` plus a flat little-endian
//! `weights.bin` in the model's element type.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::model::{Model, ModelConfig};
use crate::params::Role;
use crate::{NeuralError, Result};

pub const MANIFEST: &str = "manifest.json";
pub const WEIGHTS: &str = "weights.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub role: Role,
    pub shape: Vec<usize>,
    /// Element offset into `weights.bin`.
    pub offset: usize,
}

/// Run metadata stored alongside the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub step: u64,
    pub lesson: Option<u8>,
    pub variant: Option<String>,
    pub seed: u64,
    pub parent: Option<String>,
    /// Free-form settings of the run that produced the checkpoint.
    #[serde(default)]
    pub run: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model: ModelConfig,
    pub dtype: String,
    #[serde(flatten)]
    pub meta: CheckpointMeta,
    pub tensors: Vec<TensorEntry>,
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> NeuralError + '_ {
    move |source| NeuralError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save<T: Element>(dir: &Path, model: &Model<T>, meta: CheckpointMeta) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let store = &model.store;
    let mut bytes = Vec::with_capacity(store.ids().map(|id| store.value(id).len()).sum::<usize>() * T::BYTES);
    let mut tensors = Vec::with_capacity(store.len());
    let mut offset = 0;
    for id in store.ids() {
        let p = store.param(id);
        tensors.push(TensorEntry {
            name: p.name.clone(),
            role: p.role,
            shape: p.value.shape().to_vec(),
            offset,
        });
        offset += p.value.len();
        for &x in p.value.data() {
            x.write_le(&mut bytes);
        }
    }
    let manifest = Manifest {
        model: model.config.clone(),
        dtype: T::DTYPE.to_string(),
        meta,
        tensors,
    };
    let wpath = dir.join(WEIGHTS);
    fs::write(&wpath, &bytes).map_err(io(&wpath))?;
    let mpath = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&mpath, json).map_err(io(&mpath))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io(&path))?;
    serde_json::from_str(&text).map_err(|source| NeuralError::Manifest { path, source })
}

/// Loads a checkpoint. When `expected` is given, the stored model
/// configuration must match it exactly. Weights stored in another element
/// type are converted.
pub fn load<T: Element>(dir: &Path, expected: Option<&ModelConfig>) -> Result<(Model<T>, Manifest)> {
    let manifest = read_manifest(dir)?;
    if let Some(want) = expected {
        if want != &manifest.model {
            return Err(NeuralError::Integrity(format!(
                "{}: stored model {:?} differs from expected {:?}",
                dir.display(),
                manifest.model,
                want
            )));
        }
    }
    let mut model = Model::<T>::new(manifest.model.clone(), 0)?;
    load_weights(dir, &manifest, &mut model)?;
    Ok((model, manifest))
}

/// Overwrites every tensor of `model` from the checkpoint in `dir`. Names
/// and shapes must match one-to-one.
pub fn load_weights<T: Element>(dir: &Path, manifest: &Manifest, model: &mut Model<T>) -> Result<()> {
    let width = match manifest.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(NeuralError::Integrity(format!("unknown dtype {other}"))),
    };
    let wpath = dir.join(WEIGHTS);
    let bytes = fs::read(&wpath).map_err(io(&wpath))?;
    let total: usize = manifest.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if bytes.len() != total * width {
        return Err(NeuralError::Integrity(format!(
            "{}: {} bytes, manifest describes {}",
            wpath.display(),
            bytes.len(),
            total * width
        )));
    }
    if manifest.tensors.len() != model.store.len() {
        return Err(NeuralError::Integrity(format!(
            "checkpoint has {} tensors, model has {}",
            manifest.tensors.len(),
            model.store.len()
        )));
    }
    for t in &manifest.tensors {
        let n: usize = t.shape.iter().product();
        let chunk = &bytes[t.offset * width..(t.offset + n) * width];
        let data: Vec<T> = chunk
            .chunks_exact(width)
            .map(|b| match width {
                4 => T::c(f64::from(f32::read_le(b))),
                _ => T::c(f64::read_le(b)),
            })
            .collect();
        model.store.assign(&t.name, &t.shape, data)?;
    }
    Ok(())
}
