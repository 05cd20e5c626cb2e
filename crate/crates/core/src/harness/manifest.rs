//! JSONL sample manifests pointing at tensor files.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tensorfile;
use crate::curriculum::{TaskKind, TrainItem};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub tasks: Vec<TaskKind>,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_mel: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_ids: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speech_ids: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_wave: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speech_wave: Option<String>,
}

impl ManifestEntry {
    fn paths(&self) -> impl Iterator<Item = &String> {
        [&self.video, &self.ref_mel, &self.audio_ids, &self.speech_ids, &self.audio_wave, &self.speech_wave]
            .into_iter()
            .flatten()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

pub fn ids_to_tensor(ids: &[u32]) -> Tensor {
    Tensor::new([ids.len()], ids.iter().map(|&i| i as f32).collect()).expect("1-D shape")
}

pub fn tensor_to_ids(t: &Tensor) -> Result<Vec<u32>> {
    t.data()
        .iter()
        .map(|&x| {
            if x >= 0.0 && x.fract() == 0.0 && x < 16_777_216.0 {
                Ok(x as u32)
            } else {
                Err(Error::InvalidArgument(format!("token tensor holds non-integer value {x}")))
            }
        })
        .collect()
}

pub fn wave_to_tensor(w: &[f32]) -> Tensor {
    Tensor::new([w.len()], w.to_vec()).expect("1-D shape")
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into(), entries: Vec::new() }
    }

    fn check_ids(entries: &[ManifestEntry]) -> Result<()> {
        let mut seen = HashSet::new();
        for e in entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::DuplicateId(e.id.clone()));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Self::check_ids(&self.entries)?;
        let mut f = fs::File::create(path)?;
        for e in &self.entries {
            serde_json::to_writer(&mut f, e)?;
            f.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Fails on duplicate ids and on entries whose files are missing.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::DanglingPath(path.to_path_buf()));
        }
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut entries = Vec::new();
        for line in fs::read_to_string(path)?.lines().filter(|l| !l.trim().is_empty()) {
            entries.push(serde_json::from_str::<ManifestEntry>(line)?);
        }
        Self::check_ids(&entries)?;
        for e in &entries {
            for p in e.paths() {
                let full = root.join(p);
                if !full.is_file() {
                    return Err(Error::DanglingPath(full));
                }
            }
        }
        Ok(Self { root, entries })
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn load_tensor(&self, rel: &Option<String>) -> Result<Option<Tensor>> {
        rel.as_ref().map(|p| tensorfile::load(self.resolve(p))).transpose()
    }

    pub fn train_item(&self, e: &ManifestEntry) -> Result<TrainItem> {
        Ok(TrainItem {
            id: e.id.clone(),
            video: self.load_tensor(&e.video)?,
            transcript: e.transcript.clone(),
            ref_mel: self.load_tensor(&e.ref_mel)?,
            audio_ids: self.load_tensor(&e.audio_ids)?.map(|t| tensor_to_ids(&t)).transpose()?,
            speech_ids: self.load_tensor(&e.speech_ids)?.map(|t| tensor_to_ids(&t)).transpose()?,
        })
    }

    pub fn train_items(&self) -> Result<Vec<TrainItem>> {
        self.entries.iter().map(|e| self.train_item(e)).collect()
    }

    /// Items tagged with `task`.
    pub fn items_for(&self, task: TaskKind) -> Result<Vec<TrainItem>> {
        self.entries.iter().filter(|e| e.tasks.contains(&task)).map(|e| self.train_item(e)).collect()
    }

    pub fn waves(&self, e: &ManifestEntry) -> Result<(Option<Vec<f32>>, Option<Vec<f32>>)> {
        Ok((
            self.load_tensor(&e.audio_wave)?.map(Tensor::into_data),
            self.load_tensor(&e.speech_wave)?.map(Tensor::into_data),
        ))
    }
}
