//! Checkpoint container.
//!
//! ```text
//! STVC-CKPT 1\n
//! <header JSON, one line>\n
//! sha256 <hex digest of the header line>\n
//! <section 0><section 1>...
//! ```
//!
//! Each section is one STVT tensor. The header lists sections in order with
//! their byte length and sha256; names are `param/<name>`, `adam_m/<name>`
//! and `adam_v/<name>`. Shuffle and dropout streams are derived from the
//! training seed and the epoch index, so `seed` and `epoch` fully determine
//! the random state at an epoch boundary.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AdamState, EpochStats, TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig};
use crate::tensor::{stvt, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &str = "STVC-CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Section {
    name: String,
    length: u64,
    sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    dtype: String,
    epoch: usize,
    seed: u64,
    adam_step: u64,
    history: Vec<EpochStats>,
    sections: Vec<Section>,
}

/// Everything needed to predict with, or resume training, a model.
#[derive(Debug, Clone)]
pub struct Checkpoint<T: Scalar = f32> {
    pub trainer: Trainer<T>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn model(&self) -> &Model<T> {
        &self.trainer.model
    }

    pub fn epoch(&self) -> usize {
        self.trainer.epoch()
    }
}

impl<T: Scalar> From<Trainer<T>> for Checkpoint<T> {
    fn from(trainer: Trainer<T>) -> Self {
        Checkpoint { trainer }
    }
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Serialize a trainer to checkpoint bytes.
pub fn encode_checkpoint<T: Scalar>(trainer: &Trainer<T>) -> Vec<u8> {
    let model = &trainer.model;
    let mut payload = Vec::new();
    let mut sections = Vec::new();
    let groups = [("param", model.params()), ("adam_m", &trainer.adam.m[..]), ("adam_v", &trainer.adam.v[..])];
    for (prefix, tensors) in groups {
        for (name, t) in model.names().iter().zip(tensors) {
            let bytes = stvt::encode(t);
            sections.push(Section {
                name: format!("{prefix}/{name}"),
                length: bytes.len() as u64,
                sha256: sha_hex(&bytes),
            });
            payload.extend(bytes);
        }
    }
    let header = Header {
        model: model.config().clone(),
        train: trainer.config.clone(),
        dtype: T::DTYPE.name().into(),
        epoch: trainer.epoch(),
        seed: trainer.config.seed,
        adam_step: trainer.adam.t,
        history: trainer.history.clone(),
        sections,
    };
    let header = serde_json::to_string(&header).expect("header serializes");
    let mut out = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n{header}\nsha256 {}\n", sha_hex(header.as_bytes())).into_bytes();
    out.extend(payload);
    out
}

fn take_line<'a>(bytes: &'a [u8], pos: &mut usize, what: &str) -> Result<&'a str> {
    let start = *pos;
    let end = bytes[start..]
        .iter()
        .position(|&b| b == b'\n')
        .map(|i| start + i)
        .ok_or_else(|| Error::format(start as u64, format!("unterminated {what} line")))?;
    *pos = end + 1;
    std::str::from_utf8(&bytes[start..end]).map_err(|_| Error::format(start as u64, format!("{what} line is not UTF-8")))
}

/// Parse checkpoint bytes, verifying every checksum.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut pos = 0;
    let first = take_line(bytes, &mut pos, "magic")?;
    let version = first
        .strip_prefix(CHECKPOINT_MAGIC)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| Error::format(0, format!("expected magic {CHECKPOINT_MAGIC:?}")))?;
    if version != CHECKPOINT_VERSION.to_string() {
        return Err(Error::format(
            CHECKPOINT_MAGIC.len() as u64 + 1,
            format!("unsupported checkpoint version {version:?} (expected {CHECKPOINT_VERSION})"),
        ));
    }
    let header_at = pos;
    let header_text = take_line(bytes, &mut pos, "header")?;
    let digest_at = pos;
    let digest = take_line(bytes, &mut pos, "digest")?
        .strip_prefix("sha256 ")
        .ok_or_else(|| Error::format(digest_at as u64, "expected \"sha256 <hex>\""))?;
    if digest != sha_hex(header_text.as_bytes()) {
        return Err(Error::Integrity("header checksum mismatch".into()));
    }
    let header: Header = serde_json::from_str(header_text)
        .map_err(|e| Error::format(header_at as u64, format!("bad header: {e}")))?;

    let mut tensors = Vec::with_capacity(header.sections.len());
    for s in &header.sections {
        let end = pos
            .checked_add(s.length as usize)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::format(pos as u64, format!("section {} truncated", s.name)))?;
        let body = &bytes[pos..end];
        if sha_hex(body) != s.sha256 {
            return Err(Error::Integrity(format!("section {} checksum mismatch", s.name)));
        }
        let (raw, used) = stvt::decode_prefix(body, pos as u64)?;
        if used != body.len() {
            return Err(Error::format((pos + used) as u64, format!("section {} has trailing bytes", s.name)));
        }
        tensors.push((s.name.clone(), raw.into_tensor::<T>()));
        pos = end;
    }
    if pos != bytes.len() {
        return Err(Error::format(pos as u64, "trailing bytes after last section"));
    }

    let n = tensors.len() / 3;
    if tensors.len() != 3 * n {
        return Err(Error::format(header_at as u64, "section count is not a multiple of 3"));
    }
    let mut groups = tensors.chunks(n);
    let mut strip = |prefix: &str| -> Result<Vec<(String, Tensor<T>)>> {
        groups
            .next()
            .unwrap_or(&[])
            .iter()
            .map(|(name, t)| {
                name.strip_prefix(prefix)
                    .map(|rest| (rest.to_string(), t.clone()))
                    .ok_or_else(|| Error::format(header_at as u64, format!("unexpected section {name}")))
            })
            .collect()
    };
    let params = strip("param/")?;
    let m: Vec<Tensor<T>> = strip("adam_m/")?.into_iter().map(|(_, t)| t).collect();
    let v: Vec<Tensor<T>> = strip("adam_v/")?.into_iter().map(|(_, t)| t).collect();
    if m.iter().chain(&v).zip(params.iter().chain(&params)).any(|(a, (_, p))| a.shape() != p.shape()) {
        return Err(Error::format(header_at as u64, "optimizer moments do not match parameter shapes"));
    }
    if header.history.len() != header.epoch {
        return Err(Error::format(header_at as u64, "history length differs from epoch count"));
    }
    let model = Model::from_params(header.model, params)?;
    let trainer = Trainer {
        model,
        adam: AdamState { m, v, t: header.adam_step },
        config: header.train,
        history: header.history,
    };
    Ok(Checkpoint { trainer })
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, trainer: &Trainer<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(trainer)).map_err(|e| Error::io(path, e))
}

/// Load a checkpoint; if `expected` is given its model config must match.
pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>, expected: Option<&ModelConfig>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ckpt = decode_checkpoint::<T>(&bytes)?;
    if let Some(want) = expected {
        let have = ckpt.model().config();
        if have != want {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint holds a {} model ({}), expected {} ({})",
                have.variant.name(),
                have.hash(),
                want.variant.name(),
                want.hash()
            )));
        }
    }
    Ok(ckpt)
}
