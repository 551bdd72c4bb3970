//! `CFCK` checkpoint files.
//!
//! Layout (little-endian): magic `CFCK`, `u32` version, `u32` metadata
//! length, metadata as UTF-8 JSON, `u32` tensor count, then per tensor
//! `u32` name length, UTF-8 name, `u32` rank, `u32` dims, `f32` data.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::ModelConfig;
use super::trainer::TrainConfig;
use crate::binio::{write_f32s, write_u32, Cursor};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub epoch: usize,
    pub rng_digest: String,
    pub fold: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::Config(format!("checkpoint metadata: {e}")))?;
        let too_big = || Error::Input("checkpoint section exceeds u32 range".into());
        let mut out = Vec::new();
        let w = &mut out;
        w.write_all(CHECKPOINT_MAGIC).expect("vec write");
        write_u32(w, CHECKPOINT_VERSION).expect("vec write");
        write_u32(w, u32::try_from(meta.len()).map_err(|_| too_big())?).expect("vec write");
        w.write_all(&meta).expect("vec write");
        write_u32(w, u32::try_from(self.params.len()).map_err(|_| too_big())?).expect("vec write");
        for (name, t) in self.params.iter() {
            write_u32(w, u32::try_from(name.len()).map_err(|_| too_big())?).expect("vec write");
            w.write_all(name.as_bytes()).expect("vec write");
            write_u32(w, t.shape().len() as u32).expect("vec write");
            for &d in t.shape() {
                write_u32(w, u32::try_from(d).map_err(|_| too_big())?).expect("vec write");
            }
            write_f32s(w, t.data()).expect("vec write");
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Reads the whole file before building anything, so a damaged file
    /// never yields a partial checkpoint.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// `path` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Cursor {
            inner: bytes,
            offset: 0,
            path,
        };
        let mut magic = [0u8; 4];
        r.bytes(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            r.offset = 0;
            return Err(r.err(format!("bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}")));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            r.offset -= 4;
            return Err(r.err(format!("unsupported version {version}, expected {CHECKPOINT_VERSION}")));
        }
        let meta_len = r.u32()? as usize;
        if meta_len > r.inner.len() {
            return Err(r.err(format!("truncated file: metadata length {meta_len}")));
        }
        let mut meta = vec![0u8; meta_len];
        let meta_at = r.offset;
        r.bytes(&mut meta)?;
        let meta: CheckpointMeta = serde_json::from_slice(&meta).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            offset: meta_at,
            msg: format!("bad metadata: {e}"),
        })?;
        let n = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..n {
            let name_len = r.u32()? as usize;
            if name_len > r.inner.len() {
                return Err(r.err(format!("truncated file: name length {name_len}")));
            }
            let mut name = vec![0u8; name_len];
            r.bytes(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| r.err("tensor name is not UTF-8"))?;
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(r.err(format!("implausible rank {rank} for `{name}`")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let len = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let len = match len {
                Some(l) if l.saturating_mul(4) <= r.inner.len() => l,
                _ => return Err(r.err(format!("truncated file: tensor `{name}` with shape {shape:?}"))),
            };
            let data = r.f32s(len)?;
            let t = Tensor::new(shape, data).map_err(|e| r.err(e.to_string()))?;
            params.insert(name, t).map_err(|e| r.err(e.to_string()))?;
        }
        if !r.inner.is_empty() {
            return Err(r.err("trailing bytes after the last tensor"));
        }
        Ok(Self { meta, params })
    }
}
