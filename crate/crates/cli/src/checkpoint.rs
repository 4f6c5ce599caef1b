//! `CDL1` checkpoints: magic, version, a JSON manifest, then every tensor
//! as little-endian `f32` in manifest order. Optimizer moments are stored
//! as extra tensors so a run can resume exactly.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use codial_core::models::Codial;
use codial_core::numerics::Optimizer;
use codial_core::training::{TrainConfig, Trainer};
use codial_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CDL1";
pub const CHECKPOINT_VERSION: u32 = 1;
const PREFIX_LEN: usize = 4 + 4 + 8;

const FIRST_MOMENT: &str = "opt.m.";
const SECOND_MOMENT: &str = "opt.v.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in bytes from the start of the blob section.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// Completed epochs; also keys every random stream of the next epoch.
    pub epoch: usize,
    pub seed: u64,
    pub optimizer_steps: u64,
    pub config: TrainConfig,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub optimizer_steps: u64,
    pub config: TrainConfig,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        let store = &t.model().store;
        let opt = t.optimizer();
        let mut tensors: Vec<(String, Tensor<f32>)> = store.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect();
        for (prefix, moments) in [(FIRST_MOMENT, &opt.first), (SECOND_MOMENT, &opt.second)] {
            for ((_, p), m) in store.iter().zip(moments) {
                let value = Tensor::new(p.value.shape().to_vec(), m.clone()).expect("moment matches parameter");
                tensors.push((format!("{prefix}{}", p.name), value));
            }
        }
        Self {
            epoch: t.epoch(),
            optimizer_steps: opt.steps,
            config: t.config().clone(),
            tensors,
        }
    }

    fn split(&self) -> (Vec<(String, Tensor<f32>)>, Vec<Vec<f32>>, Vec<Vec<f32>>) {
        let mut params = Vec::new();
        let mut first = Vec::new();
        let mut second = Vec::new();
        for (name, t) in &self.tensors {
            if name.starts_with(FIRST_MOMENT) {
                first.push(t.data().to_vec());
            } else if name.starts_with(SECOND_MOMENT) {
                second.push(t.data().to_vec());
            } else {
                params.push((name.clone(), t.clone()));
            }
        }
        (params, first, second)
    }

    /// The model with checkpointed weights and batch-norm statistics.
    pub fn model(&self) -> Result<Codial<f32>> {
        let mut model = Codial::new(self.config.model.clone(), self.config.seed)?;
        model.load_values(&self.split().0)?;
        Ok(model)
    }

    /// A trainer positioned after the checkpointed epoch.
    pub fn into_trainer(self, config: TrainConfig) -> Result<Trainer> {
        if config.model != self.config.model || config.seed != self.config.seed {
            return Err(CliError::Invalid(
                "resume config differs from the checkpoint in model or seed".into(),
            ));
        }
        let model = self.model()?;
        let (_, first, second) = self.split();
        let mut opt = Optimizer::new(config.optimizer, &model.store)?;
        if first.len() != opt.first.len() || second.len() != opt.second.len() {
            return Err(CliError::Invalid("checkpoint lacks optimizer state".into()));
        }
        opt.first = first;
        opt.second = second;
        opt.steps = self.optimizer_steps;
        Ok(Trainer::resume(config, model, opt, self.epoch)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let entries = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let e = TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += 4 * t.len() as u64;
                e
            })
            .collect();
        let manifest = Manifest {
            epoch: self.epoch,
            seed: self.config.seed,
            optimizer_steps: self.optimizer_steps,
            config: self.config.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(PREFIX_LEN + json.len() + offset as usize);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let fail = |offset: usize, message: String| CliError::Format {
            path: path.to_path_buf(),
            offset: offset as u64,
            message,
        };
        if bytes.len() < PREFIX_LEN {
            return Err(fail(bytes.len(), format!("file has {} bytes, header needs {PREFIX_LEN}", bytes.len())));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(fail(0, "bad magic, expected CDL1".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(fail(4, format!("unsupported version {version}")));
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let blob_start = PREFIX_LEN
            .checked_add(mlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| fail(bytes.len(), format!("manifest of {mlen} bytes runs past the end of the file")))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[PREFIX_LEN..blob_start])
            .map_err(|e| fail(PREFIX_LEN, format!("manifest: {e}")))?;
        let blob = &bytes[blob_start..];
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        let mut expected = 0u64;
        for e in &manifest.tensors {
            let count: usize = e.shape.iter().product();
            if e.offset != expected {
                return Err(fail(blob_start, format!("tensor {} has offset {}, expected {expected}", e.name, e.offset)));
            }
            let end = e.offset as usize + 4 * count;
            if end > blob.len() {
                return Err(fail(
                    bytes.len(),
                    format!("tensor {} needs {} bytes, file has {}", e.name, blob_start + end, bytes.len()),
                ));
            }
            let data = blob[e.offset as usize..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
            expected = end as u64;
        }
        if expected as usize != blob.len() {
            return Err(fail(blob_start + expected as usize, "trailing bytes after the last tensor".into()));
        }
        if manifest.seed != manifest.config.seed {
            return Err(fail(PREFIX_LEN, "manifest seed differs from its config".into()));
        }
        Ok(Self {
            epoch: manifest.epoch,
            optimizer_steps: manifest.optimizer_steps,
            config: manifest.config,
            tensors,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut f = File::create(path).map_err(io_err(path))?;
    f.write_all(&ckpt.to_bytes()).map_err(io_err(path))?;
    f.sync_all().map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    Checkpoint::from_bytes(path, &bytes)
}
