//! Checkpoint container.
//!
//! Layout: the 8-byte magic `IGDCKPT\0`, a little-endian `u32` format
//! version, a `u64` header length, the JSON header, then every parameter
//! tensor as little-endian `f32` in header order, followed by the EMA
//! tensors when present.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::model::DiscoDitConfig;
use crate::params::ParamStore;

pub const MAGIC: &[u8; 8] = b"IGDCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config_hash: String,
    pub schedule_fingerprint: String,
    pub step: usize,
    pub seed: u64,
    pub model: DiscoDitConfig,
    pub t_c: f64,
    pub tensors: Vec<TensorInfo>,
    pub has_ema: bool,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamStore,
    pub ema: Option<ParamStore>,
}

fn blob(ps: &ParamStore, out: &mut Vec<u8>) {
    for v in ps.values() {
        for &x in v.iter() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = self.header.clone();
        header.tensors = self
            .params
            .names()
            .iter()
            .zip(self.params.values())
            .map(|(n, v)| TensorInfo {
                name: n.clone(),
                rows: v.nrows(),
                cols: v.ncols(),
            })
            .collect();
        header.has_ema = self.ema.is_some();
        let json = serde_json::to_vec(&header).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(json.len() + 16 + 8 * self.params.scalar_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        blob(&self.params, &mut out);
        if let Some(ema) = &self.ema {
            if ema.names() != self.params.names() {
                return Err(NnError::Checkpoint("EMA tensors do not match parameters".into()));
            }
            blob(ema, &mut out);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| NnError::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported format version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        let mut off = 20 + hlen;
        let read_store = |off: &mut usize| -> Result<ParamStore> {
            let mut ps = ParamStore::new();
            for t in &header.tensors {
                let n = t.rows * t.cols;
                let raw = bytes
                    .get(*off..*off + 4 * n)
                    .ok_or_else(|| bad("truncated tensor data"))?;
                let vals: Vec<f64> = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect();
                if vals.iter().any(|v| !v.is_finite()) {
                    return Err(NnError::Checkpoint(format!("non-finite value in {}", t.name)));
                }
                ps.push(
                    t.name.clone(),
                    ndarray::Array2::from_shape_vec((t.rows, t.cols), vals).expect("shape"),
                );
                *off += 4 * n;
            }
            Ok(ps)
        };
        let params = read_store(&mut off)?;
        let ema = if header.has_ema {
            Some(read_store(&mut off)?)
        } else {
            None
        };
        if off != bytes.len() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Self { header, params, ema })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// The parameters used for sampling: the EMA when present.
    pub fn sampling_params(&self) -> &ParamStore {
        self.ema.as_ref().unwrap_or(&self.params)
    }
}
