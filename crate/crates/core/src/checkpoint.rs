//! On-disk checkpoints: `manifest.json` describes every tensor by name,
//! shape and byte offset into `weights.bin`, which holds little-endian
//! `f64` values back to back. Training checkpoints add optimizer,
//! supervision and loop-progress sections.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::MultimodalDataset;
use crate::error::{Error, Result};
use crate::model::{ArchConfig, ModelParams};
use crate::regulator::{SupervisionState, TraceRow};
use crate::tensor::Tensor;
use crate::trainer::{AdamState, Counters, MetricsRow, TrainConfig, Trainer};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
const FORMAT: &str = "redcore-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the weights file.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSection {
    pub step: u64,
    pub first_moment: Vec<TensorEntry>,
    pub second_moment: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressSection {
    pub config: TrainConfig,
    pub counters: Counters,
    pub stream_epoch: u64,
    pub stream_offset: usize,
    pub n_train: usize,
    pub last_ra: Option<Vec<f64>>,
    pub metrics: Vec<MetricsRow>,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub arch: ArchConfig,
    pub tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supervision: Option<SupervisionState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub progress: Option<ProgressSection>,
}

/// Everything a checkpoint directory can hold.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ModelParams,
    pub adam: Option<AdamState>,
    pub supervision: Option<SupervisionState>,
    pub progress: Option<ProgressSection>,
}

struct Packer {
    bytes: Vec<u8>,
}

impl Packer {
    fn push(&mut self, name: String, t: &Tensor) -> TensorEntry {
        let offset = self.bytes.len() as u64;
        for v in t.data() {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
        TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset,
        }
    }
}

fn write_dir(dir: &Path, manifest: &Manifest, bytes: &[u8]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let wpath = dir.join(WEIGHTS_FILE);
    fs::write(&wpath, bytes).map_err(|e| Error::io(&wpath, e))?;
    let mpath = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Checkpoint(format!("cannot encode manifest: {e}")))?;
    fs::write(&mpath, json).map_err(|e| Error::io(&mpath, e))
}

fn pack_model(model: &ModelParams, packer: &mut Packer) -> Vec<TensorEntry> {
    model
        .params
        .named()
        .into_iter()
        .map(|(n, t)| packer.push(n, t))
        .collect()
}

pub fn save_model(model: &ModelParams, dir: &Path) -> Result<()> {
    let mut packer = Packer { bytes: Vec::new() };
    let tensors = pack_model(model, &mut packer);
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        arch: model.arch.clone(),
        tensors,
        optimizer: None,
        supervision: None,
        progress: None,
    };
    write_dir(dir, &manifest, &packer.bytes)
}

/// Saves the full training state at an outer-step boundary.
pub fn save_checkpoint(trainer: &Trainer, dir: &Path) -> Result<()> {
    let mut packer = Packer { bytes: Vec::new() };
    let tensors = pack_model(&trainer.model, &mut packer);
    let names: Vec<String> = tensors.iter().map(|e| e.name.clone()).collect();
    let first_moment = names
        .iter()
        .zip(&trainer.adam.m)
        .map(|(n, t)| packer.push(format!("adam.m.{n}"), t))
        .collect();
    let second_moment = names
        .iter()
        .zip(&trainer.adam.v)
        .map(|(n, t)| packer.push(format!("adam.v.{n}"), t))
        .collect();
    let (stream_epoch, stream_offset) = trainer.stream_position();
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        arch: trainer.model.arch.clone(),
        tensors,
        optimizer: Some(OptimizerSection {
            step: trainer.adam.step,
            first_moment,
            second_moment,
        }),
        supervision: Some(trainer.supervision.clone()),
        progress: Some(ProgressSection {
            config: trainer.config.clone(),
            counters: trainer.counters,
            stream_epoch,
            stream_offset,
            n_train: trainer.n_train(),
            last_ra: trainer.last_ra.clone(),
            metrics: trainer.metrics.clone(),
            trace: trainer.trace.clone(),
        }),
    };
    write_dir(dir, &manifest, &packer.bytes)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn read_tensor(bytes: &[u8], entry: &TensorEntry, expected_shape: &[usize]) -> Result<Tensor> {
    if entry.shape != expected_shape {
        return Err(bad(format!(
            "tensor {} has shape {:?}, architecture expects {:?}",
            entry.name, entry.shape, expected_shape
        )));
    }
    let n: usize = entry.shape.iter().product();
    let start = entry.offset as usize;
    let end = start + n * 8;
    if end > bytes.len() {
        return Err(bad(format!(
            "{WEIGHTS_FILE} is truncated: tensor {} needs bytes {start}..{end}, file has {}",
            entry.name,
            bytes.len()
        )));
    }
    let data = bytes[start..end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(entry.shape.clone(), data).map_err(|e| bad(format!("tensor {}: {e}", entry.name)))
}

fn read_group(bytes: &[u8], entries: &[TensorEntry], expected: &[(String, Vec<usize>)], prefix: &str) -> Result<Vec<Tensor>> {
    if entries.len() != expected.len() {
        return Err(bad(format!(
            "manifest lists {} {prefix}tensors, architecture has {}",
            entries.len(),
            expected.len()
        )));
    }
    entries
        .iter()
        .zip(expected)
        .map(|(e, (name, shape))| {
            let want = format!("{prefix}{name}");
            if e.name != want {
                return Err(bad(format!("expected tensor {want}, found {}", e.name)));
            }
            read_tensor(bytes, e, shape)
        })
        .collect()
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| bad(format!("{}: {e}", mpath.display())))?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(bad(format!(
            "unsupported checkpoint format {} v{}",
            manifest.format, manifest.version
        )));
    }
    manifest.arch.validate().map_err(|e| bad(e.to_string()))?;
    let wpath = dir.join(WEIGHTS_FILE);
    let bytes = fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;

    let expected = ModelParams::expected_shapes(&manifest.arch)?;
    let mut total: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    let weights = read_group(&bytes, &manifest.tensors, &expected, "")?;
    let mut model = ModelParams::init(&manifest.arch, 0)?;
    for (slot, t) in model.params.leaves_mut().into_iter().zip(weights) {
        *slot = t;
    }

    let adam = match &manifest.optimizer {
        None => None,
        Some(opt) => {
            total *= 3;
            Some(AdamState {
                m: read_group(&bytes, &opt.first_moment, &expected, "adam.m.")?,
                v: read_group(&bytes, &opt.second_moment, &expected, "adam.v.")?,
                step: opt.step,
            })
        }
    };
    if bytes.len() != total * 8 {
        return Err(bad(format!(
            "{WEIGHTS_FILE} has {} bytes, manifest describes {}",
            bytes.len(),
            total * 8
        )));
    }
    if let Some(sup) = &manifest.supervision {
        let m = manifest.arch.n_modalities();
        if sup.eta.len() != m || sup.mal.len() != m {
            return Err(bad("supervision state does not match the modality count"));
        }
    }
    Ok(Checkpoint {
        model,
        adam,
        supervision: manifest.supervision,
        progress: manifest.progress,
    })
}

/// Loads a training checkpoint and rebuilds the trainer for `train`.
pub fn resume(dir: &Path, train: &MultimodalDataset) -> Result<Trainer> {
    let ck = load_checkpoint(dir)?;
    let (Some(adam), Some(sup), Some(p)) = (ck.adam, ck.supervision, ck.progress) else {
        return Err(bad("checkpoint has no training state to resume from"));
    };
    if p.n_train != train.len() {
        return Err(bad(format!(
            "checkpoint was taken on {} training samples, got {}",
            p.n_train,
            train.len()
        )));
    }
    if ck.model.arch != p.config.arch.for_dataset(train) {
        return Err(bad("dataset does not match the checkpointed architecture"));
    }
    Trainer::from_parts(
        p.config,
        ck.model,
        adam,
        sup,
        p.counters,
        p.last_ra,
        p.metrics,
        p.trace,
        (p.stream_epoch, p.stream_offset),
        p.n_train,
    )
}
