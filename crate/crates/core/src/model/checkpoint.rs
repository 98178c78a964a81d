//! Single-file container of named JSON documents and tensors.
//!
//! Layout: magic `MGCKPT01`, little-endian u64 length of the table of
//! contents, the table of contents as JSON, then the payloads back to back.
//! Each entry records its offset into the payload area, its length and the
//! sha256 of its bytes; reading verifies every digest.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::NetworkConfig;
use super::params::NetworkParams;
use crate::error::{Error, Result};
use crate::numcore::{decode_tensor, encode_tensor, AnyTensor, Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MGCKPT01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Json,
    Tensor,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TocEntry {
    name: String,
    kind: EntryKind,
    offset: u64,
    len: u64,
    sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Toc {
    version: u32,
    entries: Vec<TocEntry>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, EntryKind, Vec<u8>)>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    fn put(&mut self, name: &str, kind: EntryKind, bytes: Vec<u8>) {
        if let Some(e) = self.entries.iter_mut().find(|e| e.0 == name) {
            *e = (name.to_string(), kind, bytes);
        } else {
            self.entries.push((name.to_string(), kind, bytes));
        }
    }

    fn get(&self, name: &str, kind: EntryKind) -> Option<&[u8]> {
        self.entries
            .iter()
            .find(|e| e.0 == name && e.1 == kind)
            .map(|e| e.2.as_slice())
    }

    pub fn names(&self) -> impl Iterator<Item = (&str, EntryKind)> {
        self.entries.iter().map(|e| (e.0.as_str(), e.1))
    }

    pub fn put_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.put(name, EntryKind::Json, serde_json::to_vec(value)?);
        Ok(())
    }

    pub fn json<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        let bytes = self
            .get(name, EntryKind::Json)
            .ok_or_else(|| Error::Data(format!("checkpoint has no JSON entry `{name}`")))?;
        Ok(serde_json::from_slice(bytes)?)
    }

    pub fn has(&self, name: &str) -> bool {
        self.entries.iter().any(|e| e.0 == name)
    }

    pub fn put_tensor<F: Real>(&mut self, name: &str, t: &Tensor<F>) {
        self.put(name, EntryKind::Tensor, encode_tensor(t));
    }

    pub fn tensor(&self, name: &str) -> Result<AnyTensor> {
        let bytes = self
            .get(name, EntryKind::Tensor)
            .ok_or_else(|| Error::Data(format!("checkpoint has no tensor `{name}`")))?;
        Ok(decode_tensor(bytes)?.0)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let entries = self
            .entries
            .iter()
            .map(|(name, kind, bytes)| {
                let e = TocEntry {
                    name: name.clone(),
                    kind: *kind,
                    offset,
                    len: bytes.len() as u64,
                    sha256: sha256_hex(bytes),
                };
                offset += bytes.len() as u64;
                e
            })
            .collect();
        let toc = serde_json::to_vec(&Toc {
            version: 1,
            entries,
        })?;
        let mut out = Vec::with_capacity(16 + toc.len() + offset as usize);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(toc.len() as u64).to_le_bytes());
        out.extend_from_slice(&toc);
        for (_, _, bytes) in &self.entries {
            out.extend_from_slice(bytes);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |offset: usize, msg: String| Error::Format {
            offset: offset as u64,
            msg,
        };
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(fail(0, "not a checkpoint (bad magic)".into()));
        }
        let toc_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let data_start = 16usize
            .checked_add(toc_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| fail(8, "table of contents runs past end of file".into()))?;
        let toc: Toc = serde_json::from_slice(&bytes[16..data_start])
            .map_err(|e| fail(16, format!("unreadable table of contents: {e}")))?;
        let mut entries = Vec::with_capacity(toc.entries.len());
        for e in toc.entries {
            let start = data_start + e.offset as usize;
            let end = start
                .checked_add(e.len as usize)
                .filter(|&end| end <= bytes.len())
                .ok_or_else(|| fail(start, format!("entry `{}` truncated", e.name)))?;
            let payload = &bytes[start..end];
            if sha256_hex(payload) != e.sha256 {
                return Err(fail(
                    start,
                    format!("digest mismatch for entry `{}`", e.name),
                ));
            }
            entries.push((e.name, e.kind, payload.to_vec()));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingPath(path.to_path_buf()),
            _ => e.into(),
        })?;
        Self::from_bytes(&bytes)
    }

    /// Store the network config (under `config`) and every parameter tensor
    /// (under `param/<path>`).
    pub fn put_network<F: Real>(&mut self, params: &NetworkParams<F>) -> Result<()> {
        self.put_json("config", &params.config)?;
        for r in params.tensors() {
            self.put_tensor(&format!("param/{}", r.path), r.tensor);
        }
        Ok(())
    }

    pub fn network<F: Real>(&self) -> Result<NetworkParams<F>> {
        let config: NetworkConfig = self.json("config")?;
        let mut params = NetworkParams::<F>::init(&config, &mut crate::numcore::Rng::new(0))?;
        params.load_tensors(|path| {
            self.tensor(&format!("param/{path}"))
                .ok()
                .map(|t| t.to::<F>())
        })?;
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConvConfig, ConvKind};
    use crate::numcore::Rng;

    #[test]
    fn network_roundtrip() {
        let cfg = NetworkConfig {
            layers: 2,
            hidden: 3,
            conv: ConvConfig {
                variant: ConvKind::L,
                taps: 2,
                max_delay: 4,
                ..Default::default()
            },
            ..Default::default()
        };
        let p = NetworkParams::<f32>::init(&cfg, &mut Rng::new(5)).unwrap();
        let mut ck = Checkpoint::new();
        ck.put_network(&p).unwrap();
        ck.put_json("meta", &serde_json::json!({"epoch": 3}))
            .unwrap();
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.network::<f32>().unwrap(), p);
        assert_eq!(back.json::<serde_json::Value>("meta").unwrap()["epoch"], 3);
    }

    #[test]
    fn corruption_is_detected() {
        let mut ck = Checkpoint::new();
        ck.put_tensor("x", &Tensor::<f64>::full(&[4], 1.0));
        let mut bytes = ck.to_bytes().unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        let err = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("digest mismatch"), "{err}");
    }

    #[test]
    fn bad_magic() {
        assert!(matches!(
            Checkpoint::from_bytes(b"NOTACKPT\0\0\0\0\0\0\0\0"),
            Err(Error::Format { offset: 0, .. })
        ));
    }
}
