//! Checkpoint file format.
//!
//! Layout: magic `ACBK`, format version u32, a count-prefixed sequence of
//! parameter records (u32 name length + UTF-8 name, u32 rank, extents as
//! u32s, little-endian float32 payload), then a JSON trailer carrying the
//! model config. All integers little-endian. Saving a loaded checkpoint
//! reproduces the bytes exactly.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ModelConfig, ModelParams};
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ACBK";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("parameter {name}: checkpoint shape {got:?} does not match model shape {want:?}")]
    ShapeMismatch {
        name: String,
        got: Vec<usize>,
        want: Vec<usize>,
    },
    #[error("checkpoint is missing parameter {0}")]
    MissingParam(String),
    #[error("checkpoint has unexpected parameter {0}")]
    UnexpectedParam(String),
    #[error("config trailer: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config invalid: {0}")]
    Config(String),
}

#[derive(Serialize, Deserialize)]
struct Trailer {
    config: ModelConfig,
    vocab_size: usize,
}

/// Serializes the named-parameter archive plus config trailer.
pub fn save_checkpoint<E: Element>(
    params: &ModelParams<E>,
    path: &Path,
) -> Result<(), CheckpointError> {
    let bytes = checkpoint_bytes(params)?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

pub fn checkpoint_bytes<E: Element>(params: &ModelParams<E>) -> Result<Vec<u8>, CheckpointError> {
    let mut records: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    let mut scratch = params.clone();
    scratch.for_each_param(&mut |name, t| {
        let payload: Vec<f32> = t.data().iter().map(|&x| x.to_f64() as f32).collect();
        records.push((name, t.shape().to_vec(), payload));
    });

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, shape, payload) in &records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &extent in shape {
            out.extend_from_slice(&(extent as u32).to_le_bytes());
        }
        for &v in payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let trailer = Trailer {
        config: params.config.clone(),
        vocab_size: params.config.vocab_size(),
    };
    out.extend_from_slice(&serde_json::to_vec(&trailer)?);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Corrupt(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Loads a checkpoint, rebuilding the model from the config trailer and the
/// parameter records. Fails on bad magic, unknown versions, truncation, and
/// any name/shape disagreement with the config.
pub fn load_checkpoint<E: Element>(path: &Path) -> Result<ModelParams<E>, CheckpointError> {
    let bytes = std::fs::read(path)?;
    load_checkpoint_bytes(&bytes)
}

pub fn load_checkpoint_bytes<E: Element>(bytes: &[u8]) -> Result<ModelParams<E>, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let count = r.u32()? as usize;
    let mut records: std::collections::HashMap<String, (Vec<usize>, Vec<f32>)> =
        std::collections::HashMap::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| CheckpointError::Corrupt(format!("bad parameter name: {e}")))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4)?;
        let payload: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if records.insert(name.clone(), (shape, payload)).is_some() {
            return Err(CheckpointError::Corrupt(format!(
                "duplicate parameter {name}"
            )));
        }
    }
    let trailer: Trailer = serde_json::from_slice(&bytes[r.pos..])?;
    let config = trailer.config;
    config
        .validate()
        .map_err(|e| CheckpointError::Config(e.to_string()))?;

    // Build the skeleton, then overwrite every tensor from its record.
    let mut params = ModelParams::<E>::init(&config, &mut Rng::new(0))
        .map_err(|e| CheckpointError::Config(e.to_string()))?;
    let mut failure: Option<CheckpointError> = None;
    params.for_each_param(&mut |name, t| {
        if failure.is_some() {
            return;
        }
        match records.remove(&name) {
            None => failure = Some(CheckpointError::MissingParam(name)),
            Some((shape, payload)) => {
                if shape != t.shape() {
                    failure = Some(CheckpointError::ShapeMismatch {
                        name,
                        got: shape,
                        want: t.shape().to_vec(),
                    });
                    return;
                }
                let data: Vec<E> = payload
                    .iter()
                    .map(|&v| E::from_f64(f64::from(v)))
                    .collect();
                *t = Tensor::parameter(&shape, data);
            }
        }
    });
    if let Some(err) = failure {
        return Err(err);
    }
    if let Some(extra) = records.keys().next() {
        return Err(CheckpointError::UnexpectedParam(extra.clone()));
    }
    Ok(params)
}
