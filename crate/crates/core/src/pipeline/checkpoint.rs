use std::path::Path;

use forgeloc_tensor::optim::{AdamW, AdamWConfig};
use forgeloc_tensor::{Shape, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::error::IoContext;
use crate::params::ParamStore;
use crate::{Error, ForgeryModel, Result};

pub const CHECKPOINT_FORMAT: u32 = 1;

/// `f32` values stored as little-endian hex so that reloading is exact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Bits(String);

impl Bits {
    pub fn encode(values: &[f32]) -> Self {
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self(hex::encode(bytes))
    }

    pub fn decode(&self) -> Result<Vec<f32>> {
        let bytes = hex::decode(&self.0).map_err(|e| Error::Checkpoint(format!("bad tensor data: {e}")))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::Checkpoint("tensor data is not a whole number of f32".into()));
        }
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Shape,
    pub data: Bits,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredOptimizer {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Bits>,
    pub v: Vec<Bits>,
}

/// Complete training state after an epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    /// Completed epochs.
    pub epoch: u64,
    pub step: u64,
    pub gamma: f64,
    pub config: TrainConfig,
    pub model: ForgeryModel,
    pub params: Vec<StoredTensor>,
    pub optimizer: StoredOptimizer,
    pub shuffle_rng: ChaCha8Rng,
    pub noise_rng: ChaCha8Rng,
}

impl Checkpoint {
    pub fn store_params(store: &ParamStore<f32>) -> Vec<StoredTensor> {
        store
            .names()
            .iter()
            .zip(store.values())
            .map(|(name, t)| StoredTensor {
                name: name.clone(),
                shape: t.shape(),
                data: Bits::encode(t.data()),
            })
            .collect()
    }

    pub fn store_optimizer(opt: &AdamW<f32>) -> StoredOptimizer {
        let (m, v) = opt.moments();
        StoredOptimizer {
            config: opt.config.clone(),
            step: opt.step,
            m: m.iter().map(|b| Bits::encode(b)).collect(),
            v: v.iter().map(|b| Bits::encode(b)).collect(),
        }
    }

    /// Rebuilds model and parameters, checking them against the layout the
    /// stored config produces.
    pub fn restore_model(&self) -> Result<(ForgeryModel, ParamStore<f32>)> {
        let (model, mut fresh) = ForgeryModel::init::<f32>(self.model.config().clone(), 0)?;
        if model != self.model {
            return Err(Error::Checkpoint("stored model layout does not match its config".into()));
        }
        let mut loaded = ParamStore::new();
        for t in &self.params {
            loaded.add(t.name.clone(), Tensor::from_vec(t.shape, t.data.decode()?)?);
        }
        fresh.load_from(&loaded)?;
        Ok((model, fresh))
    }

    pub fn restore_optimizer(&self, store: &ParamStore<f32>) -> Result<AdamW<f32>> {
        let o = &self.optimizer;
        if o.m.len() != store.len() || o.v.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "optimizer holds {} buffers for {} parameters",
                o.m.len(),
                store.len()
            )));
        }
        let decode = |bufs: &[Bits]| -> Result<Vec<Vec<f32>>> {
            bufs.iter()
                .zip(store.values())
                .map(|(b, p)| {
                    let d = b.decode()?;
                    if d.len() != p.numel() {
                        return Err(Error::Checkpoint("optimizer buffer size does not match its parameter".into()));
                    }
                    Ok(d)
                })
                .collect()
        };
        Ok(AdamW::from_parts(o.config.clone(), o.step, decode(&o.m)?, decode(&o.v)?))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(s)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format {}", ckpt.format)));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).at(path)?)
    }
}
