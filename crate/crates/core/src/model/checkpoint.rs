//! Binary checkpoint: model config, named parameters and optional Adam state.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      b"AWGU"
//! version    u32 (= 1)
//! config     u32 byte length, UTF-8 `key = value` text
//! count      u32 number of tensors
//! per tensor u32 name length, name bytes, u32 rank (= 4), rank x u32 dims,
//!            numel x f32 values
//! has_opt    u8 (0 or 1)
//! if has_opt u64 adam step, then per tensor (same order): numel x f32 m,
//!            numel x f32 v
//! ```

use std::path::Path;

use super::{build_model, ModelConfig, Network};
use crate::error::{Error, Result};
use crate::nn::{ParameterStore, Shape};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AWGU";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParameterStore<f32>,
    /// Whether Adam moments and the step counter are stored.
    pub include_optimizer: bool,
}

impl Checkpoint {
    /// Gradient buffers are dropped; they are not part of the saved state.
    pub fn new(config: ModelConfig, mut params: ParameterStore<f32>, include_optimizer: bool) -> Self {
        params.clear_grads();
        Checkpoint {
            config,
            params,
            include_optimizer,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        let text = self.config.to_text();
        put_u32(&mut out, text.len() as u32);
        out.extend_from_slice(text.as_bytes());
        let entries = self.params.entries();
        put_u32(&mut out, entries.len() as u32);
        for e in entries {
            put_u32(&mut out, e.name.len() as u32);
            out.extend_from_slice(e.name.as_bytes());
            put_u32(&mut out, 4);
            for d in e.tensor.shape().dims() {
                put_u32(&mut out, d as u32);
            }
            put_f32s(&mut out, e.tensor.data());
        }
        out.push(self.include_optimizer as u8);
        if self.include_optimizer {
            out.extend_from_slice(&self.params.step().to_le_bytes());
            for e in entries {
                put_f32s(&mut out, &e.m);
                put_f32s(&mut out, &e.v);
            }
        }
        out
    }

    /// Parses and validates a checkpoint. The stored parameters must match
    /// the names and shapes the stored config builds: no extras, none missing.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
        let config = ModelConfig::from_text(text)?;
        let (_, mut params) = build_model::<f32>(&config)?;

        let count = r.u32()? as usize;
        let mut order = Vec::with_capacity(count);
        let mut seen = vec![false; params.len()];
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()?;
            if rank != 4 {
                return Err(Error::Checkpoint(format!("`{name}`: rank {rank}, expected 4")));
            }
            let dims = [r.u32()?, r.u32()?, r.u32()?, r.u32()?].map(|d| d as usize);
            let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
            let id = params
                .find(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter `{name}`")))?;
            if std::mem::replace(&mut seen[id.index()], true) {
                return Err(Error::Checkpoint(format!("parameter `{name}` stored twice")));
            }
            let entry = params.get_mut(id);
            if entry.tensor.shape() != shape {
                return Err(Error::Checkpoint(format!(
                    "`{name}`: stored shape {shape}, model expects {}",
                    entry.tensor.shape()
                )));
            }
            r.f32s(entry.tensor.data_mut())?;
            order.push(id);
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Checkpoint(format!(
                "missing parameter `{}`",
                params.entries()[i].name
            )));
        }
        let include_optimizer = match r.take(1)?[0] {
            0 => false,
            1 => true,
            b => return Err(Error::Checkpoint(format!("bad optimizer flag {b}"))),
        };
        if include_optimizer {
            let step = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
            params.set_step(step);
            for id in order {
                let e = params.get_mut(id);
                r.f32s(&mut e.m)?;
                r.f32s(&mut e.v)?;
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            config,
            params,
            include_optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Rebuilds the network described by the stored config.
    pub fn into_model(self) -> Result<(Network, ParameterStore<f32>)> {
        let (net, _) = build_model::<f32>(&self.config)?;
        Ok((net, self.params))
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, dst: &mut [f32]) -> Result<()> {
        let src = self.take(dst.len() * 4)?;
        for (d, c) in dst.iter_mut().zip(src.chunks_exact(4)) {
            *d = f32::from_le_bytes(c.try_into().expect("4 bytes"));
        }
        Ok(())
    }
}
