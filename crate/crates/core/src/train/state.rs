//! Resume file.
//!
//! ```text
//! 0    8   magic "MDATSTAT"
//! 8    4   format version (u32, 1)
//! 12   4   header length H (u32)
//! 16   H   UTF-8 JSON header: step, configs, BLEU and step of each kept checkpoint
//! ...      parameter blocks as in checkpoint files: weights, Adam m, Adam v,
//!          then one block per kept checkpoint
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::trainer::BestEntry;
use super::{Adam, TrainConfig};
use crate::error::{Error, Result};
use crate::model::checkpoint::{decode_params, encode_params, Reader};
use crate::model::ModelConfig;
use crate::params::ParamStore;
use crate::pivotbt::BtPolicy;
use crate::tensor::Real;

pub const STATE_FILE: &str = "state.bin";
const MAGIC: &[u8; 8] = b"MDATSTAT";
const VERSION: u32 = 1;

/// Everything needed to continue a run bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub policy: BtPolicy,
    pub params: ParamStore,
    pub adam: Adam,
    pub best: Vec<BestEntry>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    step: u64,
    adam_t: u64,
    model: ModelConfig,
    train: TrainConfig,
    policy: BtPolicy,
    best: Vec<(u64, Real)>,
}

impl TrainState {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            step: self.step,
            adam_t: self.adam.t,
            model: self.model.clone(),
            train: self.train.clone(),
            policy: self.policy.clone(),
            best: self.best.iter().map(|b| (b.step, b.bleu)).collect(),
        })?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for store in [&self.params, &self.adam.m, &self.adam.v] {
            encode_params(&mut out, store);
        }
        for b in &self.best {
            encode_params(&mut out, &b.params);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a training state file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported state version {version}")));
        }
        let hlen = r.u32()? as usize;
        let h: Header = serde_json::from_slice(r.take(hlen)?)?;
        let params = decode_params(&mut r)?;
        let m = decode_params(&mut r)?;
        let v = decode_params(&mut r)?;
        let mut best = Vec::with_capacity(h.best.len());
        for (step, bleu) in h.best {
            best.push(BestEntry {
                step,
                bleu,
                params: decode_params(&mut r)?,
            });
        }
        if !r.is_done() {
            return Err(Error::Format("trailing bytes in state file".into()));
        }
        if !m.same_layout(&params) || !v.same_layout(&params) || best.iter().any(|b| !b.params.same_layout(&params)) {
            return Err(Error::Format("state file blocks have different layouts".into()));
        }
        Ok(TrainState {
            step: h.step,
            model: h.model,
            train: h.train,
            policy: h.policy,
            params,
            adam: Adam { m, v, t: h.adam_t },
            best,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        // write-then-rename so an interrupted save leaves the old state intact
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
