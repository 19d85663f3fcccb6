//! Binary checkpoints: model structure, training iteration and all tensors.
//!
//! Layout (little-endian): magic `LSTRCKPT`, `u32` version, `u32`-prefixed
//! model-config text, `u64` iteration, then parameters and buffers, each as
//! a `u32` count of `(u32 name length, name, u32 rank, u64 dims, f32 data)`.

use std::fs;
use std::path::Path;

use crate::config::{model_from_text, model_pairs};
use crate::error::{Error, Result};
use crate::model::LeanStereo;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"LSTRCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model_text: String,
    pub iteration: u64,
    pub params: Vec<(String, Tensor)>,
    pub buffers: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_model(model: &LeanStereo, iteration: u64) -> Self {
        let model_text = model_pairs(&model.cfg)
            .into_iter()
            .map(|(k, v)| format!("{}={}\n", k, v))
            .collect();
        Checkpoint {
            model_text,
            iteration,
            params: model
                .store
                .params()
                .map(|(_, n, t)| (n.to_string(), t.clone()))
                .collect(),
            buffers: model
                .store
                .buffers()
                .map(|(_, n, t)| (n.to_string(), t.clone()))
                .collect(),
        }
    }

    /// Rebuild the network and load every tensor.
    pub fn into_model(self) -> Result<LeanStereo> {
        let cfg =
            model_from_text(&self.model_text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut model = LeanStereo::new(&cfg, 0)?;
        model.store.load_named(self.params, self.buffers)?;
        Ok(model)
    }

    /// Load tensors into an existing model whose structure must match.
    pub fn load_into(self, model: &mut LeanStereo) -> Result<()> {
        let cfg =
            model_from_text(&self.model_text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if cfg != model.cfg {
            return Err(Error::Checkpoint(
                "checkpoint was written for a different model configuration".into(),
            ));
        }
        model.store.load_named(self.params, self.buffers)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.model_text);
        out.extend_from_slice(&self.iteration.to_le_bytes());
        for group in [&self.params, &self.buffers] {
            out.extend_from_slice(&(group.len() as u32).to_le_bytes());
            for (name, t) in group {
                put_str(&mut out, name);
                out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
                for &d in t.shape() {
                    out.extend_from_slice(&(d as u64).to_le_bytes());
                }
                for &v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint(
                "not a checkpoint file (bad magic)".into(),
            ));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                version
            )));
        }
        let model_text = r.string()?;
        let iteration = r.u64()?;
        let mut groups = Vec::new();
        for _ in 0..2 {
            let n = r.u32()? as usize;
            let mut g = Vec::with_capacity(n.min(1 << 16));
            for _ in 0..n {
                let name = r.string()?;
                let rank = r.u32()? as usize;
                let mut shape = Vec::with_capacity(rank.min(8));
                for _ in 0..rank {
                    shape.push(r.u64()? as usize);
                }
                let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
                let numel = numel
                    .ok_or_else(|| Error::Checkpoint(format!("tensor '{}' is too large", name)))?;
                let raw = r.take(
                    numel
                        .checked_mul(4)
                        .ok_or_else(|| Error::Checkpoint("tensor too large".into()))?,
                )?;
                let data = raw
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect();
                g.push((name, Tensor::from_vec(&shape, data)?));
            }
            groups.push(g);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let buffers = groups.pop().expect("two groups");
        let params = groups.pop().expect("two groups");
        Ok(Checkpoint {
            model_text,
            iteration,
            params,
            buffers,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes =
            fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::decode(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut a = [0u8; 8];
        a.copy_from_slice(self.take(8)?);
        Ok(u64::from_le_bytes(a))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("name is not UTF-8".into()))
    }
}
