//! Versioned binary checkpoint container.
//!
//! Layout: magic bytes `EULCKPT1`, a little-endian u64 header length, a UTF-8
//! JSON header (version, dtype, step, config snapshots, tensor directory with
//! per-tensor CRC32), then the raw little-endian tensor payloads in directory
//! order. Save/load round-trips every parameter bit-identically.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EulerNet, EulerNetConfig};
use crate::params::ParamStore;
use crate::tensor::{Element, Tensor};
use crate::trainer::ranger::RangerState;
use crate::trainer::TrainConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EULCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

const PARAM_PREFIX: &str = "param.";
const OPTIM_M_PREFIX: &str = "optim.m.";
const OPTIM_V_PREFIX: &str = "optim.v.";
const OPTIM_SLOW_PREFIX: &str = "optim.slow.";

#[derive(Debug, Serialize, Deserialize)]
struct HeaderEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    byte_len: usize,
    crc32: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    dtype: String,
    step: u64,
    model_config: EulerNetConfig,
    train_config: TrainConfig,
    entries: Vec<HeaderEntry>,
}

/// In-memory checkpoint: named tensors plus the configuration snapshot.
#[derive(Debug, Clone)]
pub struct Checkpoint<T: Element> {
    pub version: u32,
    pub step: u64,
    pub model_config: EulerNetConfig,
    pub train_config: TrainConfig,
    pub tensors: BTreeMap<String, (Vec<usize>, Vec<T>)>,
}

impl<T: Element> Checkpoint<T> {
    /// Snapshot a model plus optimizer state.
    pub fn capture(
        model: &EulerNet<T>,
        state: &RangerState<T>,
        train_config: &TrainConfig,
    ) -> Self {
        let mut tensors = BTreeMap::new();
        for (name, tensor) in model.params.iter() {
            tensors.insert(
                format!("{PARAM_PREFIX}{name}"),
                (tensor.shape().to_vec(), tensor.data().to_vec()),
            );
        }
        let shape_of = |name: &str| -> Vec<usize> {
            model
                .params
                .get(name)
                .map(|t| t.shape().to_vec())
                .unwrap_or_default()
        };
        for (name, values) in &state.m {
            tensors.insert(format!("{OPTIM_M_PREFIX}{name}"), (shape_of(name), values.clone()));
        }
        for (name, values) in &state.v {
            tensors.insert(format!("{OPTIM_V_PREFIX}{name}"), (shape_of(name), values.clone()));
        }
        for (name, values) in &state.slow {
            tensors.insert(
                format!("{OPTIM_SLOW_PREFIX}{name}"),
                (shape_of(name), values.clone()),
            );
        }
        Checkpoint {
            version: CHECKPOINT_VERSION,
            step: state.step,
            model_config: model.config.clone(),
            train_config: train_config.clone(),
            tensors,
        }
    }

    /// Rebuild the model from the stored parameters.
    pub fn restore_model(&self) -> Result<EulerNet<T>> {
        let mut params = ParamStore::new();
        for (name, (shape, values)) in &self.tensors {
            if let Some(stripped) = name.strip_prefix(PARAM_PREFIX) {
                params.insert(stripped, Tensor::param_from_vec(values.clone(), shape)?);
            }
        }
        EulerNet::from_parts(self.model_config.clone(), params)
    }

    /// Rebuild the optimizer state (moments, slow weights, step counter).
    pub fn restore_state(&self) -> RangerState<T> {
        let mut state = RangerState {
            step: self.step,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            slow: BTreeMap::new(),
        };
        for (name, (_, values)) in &self.tensors {
            if let Some(stripped) = name.strip_prefix(OPTIM_M_PREFIX) {
                state.m.insert(stripped.to_string(), values.clone());
            } else if let Some(stripped) = name.strip_prefix(OPTIM_V_PREFIX) {
                state.v.insert(stripped.to_string(), values.clone());
            } else if let Some(stripped) = name.strip_prefix(OPTIM_SLOW_PREFIX) {
                state.slow.insert(stripped.to_string(), values.clone());
            }
        }
        state
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut payload: Vec<u8> = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, (shape, values)) in &self.tensors {
            let offset = payload.len();
            for &v in values {
                v.write_le(&mut payload);
            }
            let byte_len = payload.len() - offset;
            let crc32 = crc32fast::hash(&payload[offset..offset + byte_len]);
            entries.push(HeaderEntry {
                name: name.clone(),
                shape: shape.clone(),
                offset,
                byte_len,
                crc32,
            });
        }
        let header = Header {
            version: self.version,
            dtype: T::DTYPE.to_string(),
            step: self.step,
            model_config: self.model_config.clone(),
            train_config: self.train_config.clone(),
            entries,
        };
        let header_bytes = serde_json::to_vec(&header).expect("header serializes");

        let mut out = Vec::with_capacity(16 + header_bytes.len() + payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_bytes);
        out.extend_from_slice(&payload);
        fs::write(path, out).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::CheckpointBadMagic);
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        if bytes.len() < 16 + header_len {
            return Err(Error::CheckpointTruncated {
                expected: 16 + header_len,
                found: bytes.len(),
            });
        }
        let header: Header =
            serde_json::from_slice(&bytes[16..16 + header_len]).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                detail: format!("checkpoint header: {e}"),
            })?;
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: header.version,
                supported: CHECKPOINT_VERSION,
            });
        }
        if header.dtype != T::DTYPE {
            return Err(Error::CheckpointDtype {
                found: header.dtype,
                expected: T::DTYPE.to_string(),
            });
        }
        let payload = &bytes[16 + header_len..];
        let mut tensors = BTreeMap::new();
        for entry in &header.entries {
            let end = entry.offset + entry.byte_len;
            if end > payload.len() {
                return Err(Error::CheckpointTruncated {
                    expected: 16 + header_len + end,
                    found: bytes.len(),
                });
            }
            let chunk = &payload[entry.offset..end];
            if crc32fast::hash(chunk) != entry.crc32 {
                return Err(Error::CheckpointCrc {
                    name: entry.name.clone(),
                });
            }
            let values: Vec<T> = chunk.chunks_exact(T::WIDTH).map(T::read_le).collect();
            tensors.insert(entry.name.clone(), (entry.shape.clone(), values));
        }
        Ok(Checkpoint {
            version: header.version,
            step: header.step,
            model_config: header.model_config,
            train_config: header.train_config,
            tensors,
        })
    }
}
