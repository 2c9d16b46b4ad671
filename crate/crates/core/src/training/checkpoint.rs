//! Checkpoint file: `MMTL`, u32 version, u64 manifest length, JSON manifest,
//! then the tensors as little-endian f32 in manifest order. Tensor offsets in
//! the manifest are relative to the start of that blob.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{OptimizerState, TrainConfig, TrainHistory};
use crate::model::ModelConfig;
use crate::{Params, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MMTL";
pub const CHECKPOINT_VERSION: u32 = 1;

const HEADER_LEN: usize = 16;
const MOMENT1: &str = "optimizer.m/";
const MOMENT2: &str = "optimizer.v/";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint: bad magic {0:?}")]
    Magic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("out of bounds: {0}")]
    Bounds(String),
    #[error("tensor `{name}`: shape {shape:?} needs {expected} bytes, manifest says {found}")]
    Shape {
        name: String,
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },
    #[error("manifest: {0}")]
    Manifest(String),
}

/// Everything needed to resume training or serve predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Params,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub optimizer: Option<OptimizerState>,
    /// Epochs completed.
    pub epoch: usize,
    pub history: TrainHistory,
    /// Free-form metadata (normalizer statistics, dataset description).
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    length: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<TensorEntry>,
    model_config: ModelConfig,
    train_config: TrainConfig,
    epoch: usize,
    history: TrainHistory,
    optimizer_step: Option<u64>,
    #[serde(default)]
    extra: BTreeMap<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn new(params: Params, model: ModelConfig, train: TrainConfig) -> Self {
        Self {
            params,
            model,
            train,
            optimizer: None,
            epoch: 0,
            history: TrainHistory::default(),
            extra: BTreeMap::new(),
        }
    }

    pub fn extra_as<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Option<Result<T, CheckpointError>> {
        self.extra
            .get(key)
            .map(|v| serde_json::from_value(v.clone()).map_err(|e| CheckpointError::Manifest(format!("{key}: {e}"))))
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self.params.iter().map(|(n, t)| (n.to_string(), t)).collect();
        if let Some(opt) = &self.optimizer {
            out.extend(opt.m.iter().map(|(n, t)| (format!("{MOMENT1}{n}"), t)));
            out.extend(opt.v.iter().map(|(n, t)| (format!("{MOMENT2}{n}"), t)));
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.named_tensors();
        let mut offset = 0u64;
        let entries = tensors
            .iter()
            .map(|(name, t)| {
                let length = 4 * t.len() as u64;
                let e = TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    dtype: "f32".into(),
                    offset,
                    length,
                };
                offset += length;
                e
            })
            .collect();
        let manifest = Manifest {
            tensors: entries,
            model_config: self.model.clone(),
            train_config: self.train.clone(),
            epoch: self.epoch,
            history: self.history.clone(),
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
            extra: self.extra.clone(),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(HEADER_LEN + json.len() + offset as usize);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < HEADER_LEN {
            let mut magic = [0u8; 4];
            let n = bytes.len().min(4);
            magic[..n].copy_from_slice(&bytes[..n]);
            if &magic != CHECKPOINT_MAGIC {
                return Err(CheckpointError::Magic(magic));
            }
            return Err(CheckpointError::Bounds(format!(
                "{}-byte file is shorter than the header",
                bytes.len()
            )));
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if &magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::Magic(magic));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let blob_start = usize::try_from(manifest_len)
            .ok()
            .and_then(|l| l.checked_add(HEADER_LEN))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| CheckpointError::Bounds(format!("manifest length {manifest_len} exceeds file")))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[HEADER_LEN..blob_start])
            .map_err(|e| CheckpointError::Manifest(e.to_string()))?;
        let blob = &bytes[blob_start..];
        let mut params = Params::new();
        let mut m = Params::new();
        let mut v = Params::new();
        for e in &manifest.tensors {
            if e.dtype != "f32" {
                return Err(CheckpointError::Manifest(format!(
                    "tensor `{}` has dtype {}",
                    e.name, e.dtype
                )));
            }
            let expected = e.shape.iter().product::<usize>() * 4;
            if expected as u64 != e.length {
                return Err(CheckpointError::Shape {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    expected,
                    found: e.length as usize,
                });
            }
            let range = e
                .offset
                .checked_add(e.length)
                .filter(|&end| end <= blob.len() as u64)
                .map(|end| e.offset as usize..end as usize)
                .ok_or_else(|| {
                    CheckpointError::Bounds(format!(
                        "tensor `{}` spans bytes {}..{} of a {}-byte blob",
                        e.name,
                        e.offset,
                        e.offset.saturating_add(e.length),
                        blob.len()
                    ))
                })?;
            let data = blob[range]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::new(e.shape.clone(), data).expect("length checked");
            if let Some(n) = e.name.strip_prefix(MOMENT1) {
                m.insert(n, t);
            } else if let Some(n) = e.name.strip_prefix(MOMENT2) {
                v.insert(n, t);
            } else {
                params.insert(e.name.clone(), t);
            }
        }
        let optimizer = manifest.optimizer_step.map(|step| OptimizerState { step, m, v });
        Ok(Self {
            params,
            model: manifest.model_config,
            train: manifest.train_config,
            optimizer,
            epoch: manifest.epoch,
            history: manifest.history,
            extra: manifest.extra,
        })
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), CheckpointError> {
    fs::write(path, checkpoint.to_bytes()).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Checkpoint::from_bytes(&bytes)
}
