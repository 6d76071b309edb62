//! Flat checkpoint archive.
//!
//! Layout: 8-byte magic, `u32` version, `u64` manifest length, the manifest
//! as JSON, then every tensor as row-major little-endian `f64` in manifest
//! order. Values are stored by bit pattern, so a round trip is exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{Backbone, EncoderConfig, Model};
use crate::error::{CifmError, Result};
use crate::estimators::MineCritic;
use crate::metrics::MetricReport;
use crate::params::ParamStore;

const MAGIC: &[u8; 8] = b"CIFMCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticEntry {
    pub ema_rate: f64,
    /// Bit pattern of the log-space moving average.
    pub log_ema_bits: Option<u64>,
    pub tensors: Vec<TensorEntry>,
}

/// Where a checkpoint came from.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub dataset: String,
    pub labels: Vec<String>,
    pub seed: u64,
    pub best_epoch: usize,
    /// Test metrics recorded when the checkpoint was selected.
    pub test: Option<MetricReport>,
    pub config_hash: String,
    pub code_version: String,
    /// Resolved experiment config.
    pub config: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub architecture: Backbone,
    pub encoder: EncoderConfig,
    pub num_outputs: usize,
    pub vocab_hash_seed: u64,
    pub tensors: Vec<TensorEntry>,
    pub critic: Option<CriticEntry>,
    pub meta: CheckpointMeta,
}

fn entries(p: &ParamStore) -> Vec<TensorEntry> {
    p.names()
        .iter()
        .zip(p.tensors())
        .map(|(n, t)| TensorEntry { name: n.clone(), rows: t.nrows(), cols: t.ncols() })
        .collect()
}

pub fn to_bytes(model: &Model, meta: CheckpointMeta) -> Result<Vec<u8>> {
    let manifest = CheckpointManifest {
        architecture: model.config.backbone,
        encoder: model.config.clone(),
        num_outputs: model.num_outputs,
        vocab_hash_seed: model.config.hash_seed,
        tensors: entries(&model.params),
        critic: model.critic.as_ref().map(|c| CriticEntry {
            ema_rate: c.ema_rate,
            log_ema_bits: c.log_ema().map(f64::to_bits),
            tensors: entries(&c.params),
        }),
        meta,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(20 + json.len() + model.params.numel() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let critic_tensors = model.critic.as_ref().map_or(&[][..], |c| c.params.tensors());
    for t in model.params.tensors().iter().chain(critic_tensors) {
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CifmError::Data("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn fill(&mut self, store: &mut ParamStore, list: &[TensorEntry]) -> Result<()> {
        if list.len() != store.len() {
            return Err(CifmError::Data(format!("checkpoint has {} tensors, architecture has {}", list.len(), store.len())));
        }
        for e in list {
            let i = store
                .index_of(&e.name)
                .ok_or_else(|| CifmError::Data(format!("checkpoint tensor '{}' is not part of the architecture", e.name)))?;
            let t = store.get_mut(i);
            if t.dim() != (e.rows, e.cols) {
                return Err(CifmError::Data(format!("tensor '{}' is {}x{}, expected {:?}", e.name, e.rows, e.cols, t.dim())));
            }
            let raw = self.take(e.rows * e.cols * 8)?;
            for (v, chunk) in t.iter_mut().zip(raw.chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            }
        }
        Ok(())
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Model, CheckpointManifest)> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(CifmError::Data("not a checkpoint archive".into()));
    }
    let version = u32::from_le_bytes(c.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CifmError::Data(format!("unsupported checkpoint version {version}")));
    }
    let len = u64::from_le_bytes(c.take(8)?.try_into().expect("8 bytes")) as usize;
    let manifest: CheckpointManifest = serde_json::from_slice(c.take(len)?)?;
    let mut model = Model::new(manifest.encoder.clone(), manifest.num_outputs, 0)?;
    c.fill(&mut model.params, &manifest.tensors)?;
    if let Some(ce) = &manifest.critic {
        let w0 = ce
            .tensors
            .iter()
            .find(|e| e.name == "critic.w0")
            .ok_or_else(|| CifmError::Data("critic without critic.w0".into()))?;
        let x_dim = w0.rows.checked_sub(model.z_dim()).ok_or_else(|| CifmError::Data("critic input too narrow".into()))?;
        let critic = MineCritic::new(x_dim, model.z_dim(), w0.cols, ce.ema_rate, 0)?;
        model.critic = Some(critic);
        let critic = model.critic.as_mut().expect("just set");
        c.fill(&mut critic.params, &ce.tensors)?;
        critic.set_log_ema(ce.log_ema_bits.map(f64::from_bits));
    }
    if c.pos != bytes.len() {
        return Err(CifmError::Data(format!("{} trailing bytes after the last tensor", bytes.len() - c.pos)));
    }
    Ok((model, manifest))
}

pub fn save(path: &Path, model: &Model, meta: CheckpointMeta) -> Result<()> {
    fs::write(path, to_bytes(model, meta)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Model, CheckpointManifest)> {
    let bytes = fs::read(path).map_err(|e| CifmError::Usage(format!("cannot read checkpoint {}: {e}", path.display())))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::MineConfig;

    #[test]
    fn exact_round_trip() {
        let mut m = Model::new(EncoderConfig { vocab_size: 64, ..EncoderConfig::new(Backbone::Transformer) }, 3, 4).unwrap();
        m.attach_critic(&MineConfig::default(), 2).unwrap();
        m.critic.as_ref().unwrap().set_log_ema(Some(-0.123456789));
        m.params.get_mut(0)[[0, 0]] = f64::MIN_POSITIVE / 3.0;
        let meta = CheckpointMeta { dataset: "d".into(), seed: 9, ..Default::default() };
        let bytes = to_bytes(&m, meta.clone()).unwrap();
        let (back, manifest) = from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(manifest.meta, meta);
        assert_eq!(to_bytes(&back, meta).unwrap(), bytes);
    }

    #[test]
    fn corrupt_archives() {
        let m = Model::new(EncoderConfig { vocab_size: 32, ..EncoderConfig::new(Backbone::Mlp) }, 2, 0).unwrap();
        let bytes = to_bytes(&m, CheckpointMeta::default()).unwrap();
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
        assert!(from_bytes(b"NOTACKPT").is_err());
    }
}
