//! Training-state persistence.
//!
//! Layout (little-endian):
//!
//! ```text
//! 0   "BECK"
//! 4   u32 format version
//! 8   u32 header length L
//! 12  L bytes of UTF-8 JSON header
//! 12+L  f32 payload, blocks in header order
//! ```
//!
//! The header carries the full experiment config, so a checkpoint can be
//! re-described from its bytes alone. The content hash is the SHA-256 of the
//! whole file.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::nn::{Params, Tensor};
use crate::objectives::{EmbeddingTag, Queue};
use crate::train::{Sgd, Trainer};

pub const MAGIC: &[u8; 4] = b"BECK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    /// `online`, `momentum` or `velocity`.
    pub group: String,
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub config_hash: String,
    pub encoder_hash: String,
    pub step: u64,
    pub epoch: usize,
    pub next_view: u64,
    pub optimizer_momentum: f32,
    pub optimizer_weight_decay: f32,
    pub tensors: Vec<TensorEntry>,
    pub queue_dim: usize,
    pub queue_capacity: usize,
    /// Tags of the queued keys; their vectors follow the tensors.
    pub queue_tags: Vec<EmbeddingTag>,
}

fn push_group(entries: &mut Vec<TensorEntry>, payload: &mut Vec<f32>, group: &str, p: &Params<f32>) {
    for t in &p.tensors {
        entries.push(TensorEntry {
            group: group.into(),
            name: t.name.clone(),
            shape: t.shape.clone(),
        });
        payload.extend_from_slice(&t.data);
    }
}

pub fn encode_checkpoint(tr: &Trainer) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    push_group(&mut tensors, &mut payload, "online", &tr.params);
    if let Some(m) = &tr.momentum {
        push_group(&mut tensors, &mut payload, "momentum", m);
    }
    push_group(&mut tensors, &mut payload, "velocity", &tr.optimizer.velocity);
    let mut queue_tags = Vec::with_capacity(tr.queue.len());
    for (tag, v) in &tr.queue.entries {
        queue_tags.push(tag.clone());
        payload.extend_from_slice(v);
    }
    let header = CheckpointHeader {
        config: tr.config.clone(),
        seed: tr.config.seed,
        config_hash: tr.config.hash(),
        encoder_hash: tr.config.encoder.hash(),
        step: tr.step,
        epoch: tr.epoch,
        next_view: tr.next_view,
        optimizer_momentum: tr.optimizer.momentum,
        optimizer_weight_decay: tr.optimizer.weight_decay,
        tensors,
        queue_dim: tr.queue.dim,
        queue_capacity: tr.queue.capacity,
        queue_tags,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Config(format!("checkpoint header: {e}")))?;
    let mut out = Vec::with_capacity(12 + json.len() + payload.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses the fixed prefix and JSON header; returns the header and the
/// payload offset.
pub fn decode_header(bytes: &[u8], path: &Path) -> Result<(CheckpointHeader, usize)> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::corrupt(path, 0, "bad magic, expected BECK"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::corrupt(path, 4, format!("unsupported version {version}")));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let end = 12usize.checked_add(len).filter(|&e| e <= bytes.len());
    let end = end.ok_or_else(|| Error::corrupt(path, 8, "header length exceeds file"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[12..end]).map_err(|e| Error::corrupt(path, 12, format!("header json: {e}")))?;
    Ok((header, end))
}

/// Rebuilds the complete training state.
pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Trainer> {
    let (h, start) = decode_header(bytes, path)?;
    let body = &bytes[start..];
    if body.len() % 4 != 0 {
        return Err(Error::corrupt(path, start as u64, "payload is not a whole number of f32"));
    }
    let floats: Vec<f32> = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let needed: usize = h.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum::<usize>() + h.queue_tags.len() * h.queue_dim;
    if floats.len() != needed {
        return Err(Error::corrupt(
            path,
            start as u64,
            format!("payload holds {} values, header describes {needed}", floats.len()),
        ));
    }
    let mut groups: [Params<f32>; 3] = Default::default();
    let mut at = 0;
    for t in &h.tensors {
        let n: usize = t.shape.iter().product();
        let slot = match t.group.as_str() {
            "online" => 0,
            "momentum" => 1,
            "velocity" => 2,
            g => return Err(Error::corrupt(path, 12, format!("unknown tensor group {g:?}"))),
        };
        groups[slot].tensors.push(Tensor {
            name: t.name.clone(),
            shape: t.shape.clone(),
            data: floats[at..at + n].to_vec(),
        });
        at += n;
    }
    let mut entries = VecDeque::with_capacity(h.queue_capacity);
    for tag in h.queue_tags {
        entries.push_back((tag, floats[at..at + h.queue_dim].to_vec()));
        at += h.queue_dim;
    }
    let [params, momentum, velocity] = groups;
    let encoder = Encoder::new(h.config.encoder.clone())?;
    if h.config.hash() != h.config_hash {
        return Err(Error::corrupt(path, 12, "config hash does not match stored config"));
    }
    params.check_congruent(&velocity)?;
    let momentum = if momentum.tensors.is_empty() { None } else { Some(momentum) };
    Ok(Trainer {
        config: h.config,
        encoder,
        params,
        momentum,
        queue: Queue {
            dim: h.queue_dim,
            capacity: h.queue_capacity,
            entries,
        },
        optimizer: Sgd {
            momentum: h.optimizer_momentum,
            weight_decay: h.optimizer_weight_decay,
            velocity,
        },
        step: h.step,
        epoch: h.epoch,
        next_view: h.next_view,
    })
}

pub fn content_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes the checkpoint and returns its content hash.
pub fn save(tr: &Trainer, path: &Path) -> Result<String> {
    let bytes = encode_checkpoint(tr)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(content_hash(&bytes))
}

/// A loaded checkpoint together with its content hash.
pub struct Loaded {
    pub trainer: Trainer,
    pub content_hash: String,
}

pub fn load(path: &Path) -> Result<Loaded> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Loaded {
        trainer: decode_checkpoint(&bytes, path)?,
        content_hash: content_hash(&bytes),
    })
}

/// Everything a checkpoint says about itself, without the weights.
pub fn describe(path: &Path) -> Result<serde_json::Value> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (h, _) = decode_header(&bytes, path)?;
    let encoder = Encoder::new(h.config.encoder.clone())?;
    let count = |g: &str| -> usize {
        h.tensors
            .iter()
            .filter(|t| t.group == g)
            .map(|t| t.shape.iter().product::<usize>())
            .sum()
    };
    Ok(serde_json::json!({
        "path": path.display().to_string(),
        "content_hash": content_hash(&bytes),
        "format_version": VERSION,
        "seed": h.seed,
        "config_hash": h.config_hash,
        "encoder_hash": h.encoder_hash,
        "step": h.step,
        "epoch": h.epoch,
        "online_parameters": count("online"),
        "has_momentum_encoder": count("momentum") > 0,
        "queue_len": h.queue_tags.len(),
        "queue_capacity": h.queue_capacity,
        "config": h.config,
        "encoder": encoder.describe(),
    }))
}
