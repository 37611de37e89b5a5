//! Checkpoint container.
//!
//! All integers and floats are little-endian. Layout:
//!
//! ```text
//! offset  size  field
//! 0       8     magic "MDATCKPT"
//! 8       4     format version (u32, currently 1)
//! 12      4     byte-order mark 0x01020304 (reads back as 04 03 02 01)
//! 16      1     model kind: 0 = DAG model, 1 = autoregressive baseline
//! 17      4     header length H (u32)
//! 21      H     UTF-8 JSON header {"config": ModelConfig, "meta": {...}}
//! 21+H    4     parameter count N (u32)
//! ...           N records:
//!                 u16 name length, name bytes (UTF-8),
//!                 u8 rank, rank × u32 dims,
//!                 prod(dims) × f64 values (row-major)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{AtModel, DatModel, ModelConfig};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Real;

pub const MAGIC: &[u8; 8] = b"MDATCKPT";
pub const FORMAT_VERSION: u32 = 1;
const BYTE_ORDER_MARK: u32 = 0x0102_0304;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Dat,
    At,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub params: ParamStore,
    /// Free-form metadata such as the update count or validation BLEU.
    pub meta: Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    meta: Value,
}

impl Checkpoint {
    pub fn from_dat(model: &DatModel, meta: Value) -> Self {
        Checkpoint {
            kind: ModelKind::Dat,
            config: model.config().clone(),
            params: model.params().clone(),
            meta,
        }
    }

    pub fn from_at(model: &AtModel, meta: Value) -> Self {
        Checkpoint {
            kind: ModelKind::At,
            config: model.config().clone(),
            params: model.params().clone(),
            meta,
        }
    }

    pub fn into_dat(self) -> Result<DatModel> {
        if self.kind != ModelKind::Dat {
            return Err(Error::Format("checkpoint holds an autoregressive model".into()));
        }
        DatModel::from_params(self.config, self.params)
    }

    pub fn into_at(self) -> Result<AtModel> {
        if self.kind != ModelKind::At {
            return Err(Error::Format("checkpoint holds a DAG model".into()));
        }
        AtModel::from_params(self.config, self.params)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&BYTE_ORDER_MARK.to_le_bytes());
        out.push(match self.kind {
            ModelKind::Dat => 0,
            ModelKind::At => 1,
        });
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            meta: self.meta.clone(),
        })?;
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        encode_params(&mut out, &self.params);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        if r.u32()? != BYTE_ORDER_MARK {
            return Err(Error::Format("byte-order mark mismatch".into()));
        }
        let kind = match r.u8()? {
            0 => ModelKind::Dat,
            1 => ModelKind::At,
            k => return Err(Error::Format(format!("unknown model kind {k}"))),
        };
        let hlen = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(hlen)?)?;
        let params = decode_params(&mut r)?;
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            kind,
            config: header.config,
            params,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Append the parameter records of `store` (count + records).
pub fn encode_params(out: &mut Vec<u8>, store: &ParamStore) {
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        let shape = store.shape(id);
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in store.value(id) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn decode_params(r: &mut Reader<'_>) -> Result<ParamStore> {
    let n = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..n {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 8)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")) as Real)
            .collect();
        if store.find(&name).is_some() {
            return Err(Error::Format(format!("duplicate parameter {name}")));
        }
        store.add(name, &shape, values);
    }
    Ok(store)
}

/// Cursor over a byte buffer with bounds-checked little-endian reads.
pub struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("unexpected end of data".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}
