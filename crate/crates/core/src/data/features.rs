//! Feature file format: magic `AFV1`, u32 frame count, u32 feature width,
//! then little-endian float32 frames in row-major order.

use std::io::Write;
use std::path::Path;

use super::DataError;
use crate::tensor::{Element, Tensor};

pub const FEATURE_MAGIC: &[u8; 4] = b"AFV1";

/// Writes a `[T, d]` feature tensor. Zero-frame tensors are rejected.
pub fn write_features<E: Element>(path: &Path, features: &Tensor<E>) -> Result<(), DataError> {
    let shape = features.shape();
    if shape.len() != 2 {
        return Err(DataError::Format(format!(
            "features must be [T, d], got {shape:?}"
        )));
    }
    let (t, d) = (shape[0], shape[1]);
    if t == 0 || d == 0 {
        return Err(DataError::Format("refusing to write empty features".into()));
    }
    let mut out = Vec::with_capacity(12 + t * d * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for &v in features.data() {
        out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

/// Reads a feature file back as a `[T, d]` tensor.
pub fn read_features<E: Element>(path: &Path) -> Result<Tensor<E>, DataError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 12 {
        return Err(DataError::Format(format!(
            "{}: too short for a feature file",
            path.display()
        )));
    }
    if &bytes[0..4] != FEATURE_MAGIC {
        return Err(DataError::Format(format!("{}: bad magic", path.display())));
    }
    let t = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    let d = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    let expect = 12 + t * d * 4;
    if bytes.len() != expect {
        return Err(DataError::Format(format!(
            "{}: expected {expect} bytes for [{t}, {d}], found {}",
            path.display(),
            bytes.len()
        )));
    }
    let data: Vec<E> = bytes[12..]
        .chunks_exact(4)
        .map(|c| E::from_f64(f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))))
        .collect();
    Ok(Tensor::from_vec(&[t, d], data))
}
