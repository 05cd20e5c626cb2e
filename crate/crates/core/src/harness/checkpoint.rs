//! Checkpoint container: magic `DDCK`, u16 version, u32 header length, JSON
//! header, u32 tensor count, then per tensor a u32 name length, the UTF-8
//! name and a `DDTF` record.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::tensorfile::{self, Reader};
use crate::numerics::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"DDCK";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub stage: String,
    pub config_hash: String,
    pub step: u64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<(String, Tensor)>,
}

/// Hex SHA-256 of a serialized config.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn from_store(header: CheckpointHeader, store: &ParamStore) -> Self {
        let tensors = store
            .iter()
            .map(|(_, name, t)| (name.to_string(), Tensor::new(t.shape().to_vec(), t.data().to_vec()).unwrap()))
            .collect();
        Self { header, tensors }
    }

    /// Copies every tensor into the parameter of the same name.
    pub fn apply_to(&self, store: &mut ParamStore) -> Result<()> {
        for (name, t) in &self.tensors {
            let id = store
                .id(name)
                .ok_or_else(|| Error::InvalidArgument(format!("checkpoint tensor `{name}` has no matching parameter")))?;
            let dst = store.get_mut(id);
            if dst.shape() != t.shape() {
                return Err(Error::shape(
                    "checkpoint",
                    format!("`{name}`: checkpoint {:?} vs model {:?}", t.shape(), dst.shape()),
                ));
            }
            dst.data_mut().copy_from_slice(t.data());
        }
        let missing: Vec<&str> = store
            .iter()
            .map(|(_, n, _)| n)
            .filter(|n| !self.tensors.iter().any(|(m, _)| m == n))
            .collect();
        if !missing.is_empty() {
            return Err(Error::InvalidArgument(format!("checkpoint lacks parameters {missing:?}")));
        }
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Errors with [`Error::ConfigMismatch`] unless hashes agree or `force`.
    pub fn check_config(&self, expected_hash: &str, force: bool) -> Result<()> {
        if self.header.config_hash == expected_hash {
            return Ok(());
        }
        if force {
            log::warn!(
                "checkpoint config hash {} differs from current {}; continuing because of --force",
                self.header.config_hash,
                expected_hash
            );
            return Ok(());
        }
        Err(Error::ConfigMismatch { expected: expected_hash.to_string(), found: self.header.config_hash.clone() })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&tensorfile::encode(t));
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 4 || &buf[..4] != MAGIC {
            return Err(Error::BadMagic { expected: "DDCK" });
        }
        let mut r = Reader::new(buf);
        r.take(4)?;
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let hlen = r.u32()? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(hlen)?)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec())
                .map_err(|e| Error::InvalidArgument(format!("tensor name is not UTF-8: {e}")))?;
            let (t, used) = tensorfile::decode_prefix(r.rest())?;
            r.pos += used;
            tensors.push((name, t));
        }
        if r.pos != buf.len() {
            return Err(Error::InvalidArgument(format!("{} trailing bytes in checkpoint", buf.len() - r.pos)));
        }
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
