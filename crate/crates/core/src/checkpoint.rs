//! Single-file model checkpoints.
//!
//! Layout: the 8-byte magic `ADRNCKPT`, a little-endian `u32` format
//! version, a `u32` length followed by a JSON header (model config and
//! optional training state), then every parameter as little-endian `f64`
//! in [`AdrnModel::params`] order. When training state is present the Adam
//! first and second moments follow in the same order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AdrnModel, ModelConfig};
use crate::scalar::Scalar;
use crate::training::{Adam, TrainConfig, Trainer};

pub const MAGIC: &[u8; 8] = b"ADRNCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    dtype: String,
    train: Option<TrainHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainHeader {
    config: TrainConfig,
    step: u64,
    adam_t: u64,
}

/// Optimizer state saved alongside the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub config: TrainConfig,
    pub step: u64,
    pub adam: Adam<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub model: AdrnModel<T>,
    pub train: Option<TrainState<T>>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_model(model: AdrnModel<T>) -> Self {
        Self { model, train: None }
    }

    pub fn from_trainer(trainer: &Trainer<T>) -> Self {
        Self {
            model: trainer.model.clone(),
            train: Some(TrainState {
                config: trainer.config.clone(),
                step: trainer.step_count(),
                adam: trainer.adam.clone(),
            }),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            model: self.model.config,
            dtype: T::DTYPE.to_string(),
            train: self.train.as_ref().map(|t| TrainHeader {
                config: t.config.clone(),
                step: t.step,
                adam_t: t.adam.t,
            }),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |values: &[T]| {
            for v in values {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        };
        for p in self.model.params() {
            put(p);
        }
        if let Some(t) = &self.train {
            t.adam.m.iter().for_each(|m| put(m));
            t.adam.v.iter().for_each(|v| put(v));
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut reader = Reader { bytes, pos: 0 };
        if reader.take(8)? != MAGIC {
            return Err(Error::Format("not a model checkpoint (bad magic)".into()));
        }
        let version = reader.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let len = reader.u32()? as usize;
        let header: Header = serde_json::from_slice(reader.take(len)?)
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;

        let mut model = AdrnModel::<T>::zeros(header.model)?;
        for p in model.params_mut() {
            reader.fill(p)?;
        }
        let train = match header.train {
            Some(th) => {
                let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
                let mut adam =
                    Adam::new(&sizes, th.config.beta1, th.config.beta2, th.config.epsilon);
                for m in &mut adam.m {
                    reader.fill(m)?;
                }
                for v in &mut adam.v {
                    reader.fill(v)?;
                }
                adam.t = th.adam_t;
                Some(TrainState {
                    config: th.config,
                    step: th.step,
                    adam,
                })
            }
            None => None,
        };
        if reader.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint payload",
                bytes.len() - reader.pos
            )));
        }
        Ok(Self { model, train })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Load and require the stored model config to equal `expected`.
    pub fn load_expecting(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if &ckpt.model.config != expected {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint has {:?}, expected {:?}",
                ckpt.model.config, expected
            )));
        }
        Ok(ckpt)
    }

    /// Rebuild a trainer that continues where this checkpoint stopped,
    /// under `config` (which must describe the same model).
    pub fn into_trainer(self, config: TrainConfig) -> Result<Trainer<T>> {
        if self.model.config != config.model_config() {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint has {:?}, config describes {:?}",
                self.model.config,
                config.model_config()
            )));
        }
        match self.train {
            Some(state) => Trainer::resume(self.model, state.adam, state.step, config),
            None => Trainer::new(self.model, config),
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn fill<T: Scalar>(&mut self, dst: &mut [T]) -> Result<()> {
        let b = self.take(dst.len() * 8)?;
        for (d, c) in dst.iter_mut().zip(b.chunks_exact(8)) {
            let mut raw = [0u8; 8];
            raw.copy_from_slice(c);
            *d = T::of(f64::from_le_bytes(raw));
        }
        Ok(())
    }
}
