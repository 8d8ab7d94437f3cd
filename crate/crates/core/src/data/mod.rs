//! Synthetic bi-source datasets and their on-disk layout.

pub mod change;
pub mod density;
pub mod pgm;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use change::{gen_change_pair, ChangeEvent, ChangeSceneSpec, Rect, SceneObject};
pub use density::{gen_density_pair, DensitySceneSpec, Illumination};

use crate::error::{Error, Result};
use crate::model::{SamplePair, TaskKind};
use crate::tensor::{io, Tensor};

/// Snaps `v` to the nearest multiple of 1/255 so that images survive a PGM
/// round trip unchanged.
pub fn quantize(v: f32) -> f32 {
    (v * 255.0).round() / 255.0
}

pub const DATASET_FORMAT: &str = "comptr-dataset/1";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum SceneSpec {
    Change(ChangeSceneSpec),
    Density(DensitySceneSpec),
}

impl SceneSpec {
    pub fn task(&self) -> TaskKind {
        match self {
            SceneSpec::Change(_) => TaskKind::Binary,
            SceneSpec::Density(_) => TaskKind::Density,
        }
    }

    pub fn generate(&self, index: u64) -> Result<SamplePair> {
        match self {
            SceneSpec::Change(s) => s.generate(index),
            SceneSpec::Density(s) => s.generate(index),
        }
    }

    pub fn size(&self) -> (usize, usize) {
        match self {
            SceneSpec::Change(s) => (s.height, s.width),
            SceneSpec::Density(s) => (s.height, s.width),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub img1: String,
    pub img2: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub task: TaskKind,
    pub height: usize,
    pub width: usize,
    pub spec: SceneSpec,
    pub samples: Vec<SampleEntry>,
}

/// Generates `count` samples into `dir`: two PGM images and a CPT1 target each,
/// plus `manifest.json`.
pub fn write_dataset(spec: &SceneSpec, count: usize, dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (height, width) = spec.size();
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let s = spec.generate(i as u64)?;
        let entry = SampleEntry {
            img1: format!("{i:06}_1.pgm"),
            img2: format!("{i:06}_2.pgm"),
            target: format!("{i:06}_target.cpt"),
        };
        pgm::write(dir.join(&entry.img1), &s.img1)?;
        pgm::write(dir.join(&entry.img2), &s.img2)?;
        io::write(dir.join(&entry.target), &s.target)?;
        samples.push(entry);
    }
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        task: spec.task(),
        height,
        width,
        spec: spec.clone(),
        samples,
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = dir.as_ref().join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: DatasetManifest = serde_json::from_str(&text)?;
    if m.format != DATASET_FORMAT {
        return Err(Error::Format(format!("unsupported dataset format {:?}", m.format)));
    }
    Ok(m)
}

fn image(path: PathBuf) -> Result<Tensor<f32>> {
    let t = pgm::read(&path)?;
    let (h, w) = (t.shape()[0], t.shape()[1]);
    t.reshape(&[h, w, 1])
}

/// Loads every sample listed in the manifest of `dir`.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(DatasetManifest, Vec<SamplePair>)> {
    let dir = dir.as_ref();
    let m = read_manifest(dir)?;
    let mut out = Vec::with_capacity(m.samples.len());
    for e in &m.samples {
        let s = SamplePair::new(image(dir.join(&e.img1))?, image(dir.join(&e.img2))?, io::read_as(dir.join(&e.target))?)?;
        if s.height() != m.height || s.width() != m.width {
            return Err(Error::Format(format!("{} is not {}×{}", e.img1, m.height, m.width)));
        }
        out.push(s);
    }
    Ok((m, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SceneSpec::Change(ChangeSceneSpec { seed: 3, ..Default::default() });
        write_dataset(&spec, 3, dir.path()).unwrap();
        let (m, samples) = load_dataset(dir.path()).unwrap();
        assert_eq!(m.task, TaskKind::Binary);
        for (i, s) in samples.iter().enumerate() {
            assert_eq!(s, &spec.generate(i as u64).unwrap());
        }
        let spec = SceneSpec::Density(DensitySceneSpec::default());
        let d2 = tempfile::tempdir().unwrap();
        write_dataset(&spec, 2, d2.path()).unwrap();
        let (_, samples) = load_dataset(d2.path()).unwrap();
        assert_eq!(samples[1], spec.generate(1).unwrap());
    }

    #[test]
    fn empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SceneSpec::Change(ChangeSceneSpec::default());
        let m = write_dataset(&spec, 0, dir.path()).unwrap();
        assert!(m.samples.is_empty());
        assert!(load_dataset(dir.path()).unwrap().1.is_empty());
    }
}
