//! Checkpoint directories: one CPT1 file per parameter plus `manifest.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ComPtrModel, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{io, DType, Scalar};

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT: &str = "comptr-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config: ModelConfig,
    pub init_seed: u64,
    pub params: Vec<ParamEntry>,
}

/// Writes `model` into `dir`, creating it if needed.
pub fn save<T: Scalar>(model: &ComPtrModel<T>, init_seed: u64, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let tensors = dir.join("params");
    fs::create_dir_all(&tensors).map_err(|e| Error::io(&tensors, e))?;
    let mut params = Vec::with_capacity(model.params.len());
    for (i, (_, p)) in model.params.iter().enumerate() {
        let file = format!("params/{i:04}_{}.cpt", p.name);
        io::write(dir.join(&file), &p.value)?;
        params.push(ParamEntry {
            name: p.name.clone(),
            file,
            shape: p.value.shape().to_vec(),
            dtype: T::DTYPE,
        });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        config: model.config.clone(),
        init_seed,
        params,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format != FORMAT {
        return Err(Error::Format(format!("unsupported checkpoint format {:?}", m.format)));
    }
    Ok(m)
}

/// Rebuilds the architecture from the manifest and loads every parameter by
/// name, converting the stored dtype to `T`.
pub fn load<T: Scalar>(dir: impl AsRef<Path>) -> Result<ComPtrModel<T>> {
    let dir = dir.as_ref();
    let m = read_manifest(dir)?;
    let mut model = ComPtrModel::<T>::new(m.config.clone(), m.init_seed)?;
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let name = model.params.get(id).name.clone();
        let entry = m
            .params
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {name}")))?;
        let t = io::read_as::<T>(dir.join(&entry.file))?;
        if t.shape() != entry.shape.as_slice() {
            return Err(Error::Format(format!("{name}: file shape {:?} disagrees with manifest", t.shape())));
        }
        model.params.set_value(id, t)?;
    }
    Ok(model)
}
