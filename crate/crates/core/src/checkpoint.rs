//! Self-describing binary checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic "MPNPCKPT" | version u32
//! config: len u64, TOML bytes | relations u64
//! params: count u32, then per tensor: name (len u32 + bytes), rank u32, dims u64 × rank, values f64 × numel
//! buffers: count u32, then per buffer: name, len u64, values f64 × len
//! optimizer: flag u8; if 1: step u64, last_lr f64, weight_decay f64, first and second moments per param
//! rng: seed u64, epochs_completed u64
//! ```

use std::path::Path;

use mpnp_autodiff::Tensor;

use crate::config::TrainConfig;
use crate::dataset::write_atomic;
use crate::error::{CoreError, Result};
use crate::model::{Model, ModelConfig};
use crate::optim::AdamW;
use crate::params::ParamStore;

pub const MAGIC: &[u8; 8] = b"MPNPCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub relations: usize,
    pub params: ParamStore,
    pub optimizer: Option<AdamW>,
    pub rng_seed: u64,
    pub epochs_completed: u64,
}

impl Checkpoint {
    pub fn new(config: &TrainConfig, model: &Model, optimizer: Option<&AdamW>, epochs_completed: u64) -> Self {
        Checkpoint {
            config: config.clone(),
            relations: model.config.relations,
            params: model.params.clone(),
            optimizer: optimizer.cloned(),
            rng_seed: config.seed,
            epochs_completed,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::new(&self.config, self.relations)
    }

    /// Rebuilds the model, checking every tensor against the stored config.
    pub fn model(&self) -> Result<Model> {
        Model::from_params(self.model_config(), self.params.clone())
    }

    /// Rebuilds the model against an externally supplied architecture.
    pub fn model_with(&self, config: ModelConfig) -> Result<Model> {
        Model::from_params(config, self.params.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        w.extend_from_slice(&VERSION.to_le_bytes());
        let toml = self.config.to_toml();
        w.extend_from_slice(&(toml.len() as u64).to_le_bytes());
        w.extend_from_slice(toml.as_bytes());
        w.extend_from_slice(&(self.relations as u64).to_le_bytes());

        let put_name = |w: &mut Vec<u8>, name: &str| {
            w.extend_from_slice(&(name.len() as u32).to_le_bytes());
            w.extend_from_slice(name.as_bytes());
        };
        let put_f64s = |w: &mut Vec<u8>, values: &[f64]| {
            for v in values {
                w.extend_from_slice(&v.to_le_bytes());
            }
        };
        w.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (slot, name) in self.params.names().iter().enumerate() {
            let t = self.params.get(slot);
            put_name(&mut w, name);
            w.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                w.extend_from_slice(&(d as u64).to_le_bytes());
            }
            put_f64s(&mut w, t.values());
        }
        w.extend_from_slice(&(self.params.buffer_names().len() as u32).to_le_bytes());
        for (slot, name) in self.params.buffer_names().iter().enumerate() {
            let b = self.params.buffer(slot);
            put_name(&mut w, name);
            w.extend_from_slice(&(b.len() as u64).to_le_bytes());
            put_f64s(&mut w, b);
        }
        match &self.optimizer {
            None => w.push(0),
            Some(opt) => {
                w.push(1);
                w.extend_from_slice(&opt.step.to_le_bytes());
                w.extend_from_slice(&opt.last_lr.to_le_bytes());
                w.extend_from_slice(&opt.weight_decay.to_le_bytes());
                for (m, v) in opt.first.iter().zip(&opt.second) {
                    put_f64s(&mut w, m);
                    put_f64s(&mut w, v);
                }
            }
        }
        w.extend_from_slice(&self.rng_seed.to_le_bytes());
        w.extend_from_slice(&self.epochs_completed.to_le_bytes());
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CoreError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CoreError::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
        }
        let toml_len = r.u64()? as usize;
        let toml = std::str::from_utf8(r.take(toml_len)?).map_err(|e| CoreError::Checkpoint(format!("config: {e}")))?;
        let config = TrainConfig::from_toml(toml)?;
        let relations = r.u64()? as usize;

        let mut params = ParamStore::new();
        let count = r.u32()?;
        for _ in 0..count {
            let name = r.name()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let numel = numel.ok_or_else(|| CoreError::Checkpoint(format!("{name}: shape overflow")))?;
            let values = r.f64s(numel)?;
            let t = Tensor::new(shape, values).map_err(|e| CoreError::Checkpoint(format!("{name}: {e}")))?;
            params.add(name, t);
        }
        let count = r.u32()?;
        for _ in 0..count {
            let name = r.name()?;
            let len = r.u64()? as usize;
            let values = r.f64s(len)?;
            params.add_buffer(name, values);
        }
        let optimizer = match r.take(1)?[0] {
            0 => None,
            1 => {
                let step = r.u64()?;
                let last_lr = r.f64()?;
                let weight_decay = r.f64()?;
                let mut first = Vec::with_capacity(params.len());
                let mut second = Vec::with_capacity(params.len());
                for t in params.tensors() {
                    first.push(r.f64s(t.numel())?);
                    second.push(r.f64s(t.numel())?);
                }
                Some(AdamW {
                    weight_decay,
                    first,
                    second,
                    step,
                    last_lr,
                })
            }
            other => return Err(CoreError::Checkpoint(format!("bad optimizer flag {other}"))),
        };
        let rng_seed = r.u64()?;
        let epochs_completed = r.u64()?;
        if r.pos != bytes.len() {
            return Err(CoreError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            config,
            relations,
            params,
            optimizer,
            rng_seed,
            epochs_completed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            CoreError::Checkpoint(format!("truncated: wanted {n} bytes at offset {}, file has {}", self.pos, self.bytes.len()))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| CoreError::Checkpoint("length overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn name(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|e| CoreError::Checkpoint(format!("name: {e}")))
    }
}
