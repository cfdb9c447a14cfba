//! Checkpoint directories: `manifest.json` plus one binary file per tensor.
//!
//! Tensor file layout (little-endian): 8-byte magic, `u32` version, `u32`
//! rank, one `u64` per dimension, then the `f32` payload in row-major order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use super::{ModelConfig, ModelParameters};
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 8] = b"NEDTENS\0";
pub const TENSOR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: ModelConfig,
    /// Hex fingerprint of the vocabulary the ids refer to.
    pub vocab_hash: String,
    pub step: u64,
    /// Dev-set corpus BLEU at save time, when evaluated.
    pub metric: Option<f64>,
    pub tensors: Vec<String>,
}

pub fn encode_tensor<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(32 + 4 * t.len());
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    buf.extend_from_slice(&2u32.to_le_bytes());
    buf.extend_from_slice(&(t.rows as u64).to_le_bytes());
    buf.extend_from_slice(&(t.cols as u64).to_le_bytes());
    for x in &t.data {
        buf.extend_from_slice(&x.to_f32().unwrap().to_le_bytes());
    }
    buf
}

pub fn decode_tensor<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let bad = |m: &str| Error::Format(format!("tensor file: {m}"));
    if bytes.len() < 16 || &bytes[..8] != TENSOR_MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    if u32_at(8) != TENSOR_VERSION {
        return Err(bad("unsupported version"));
    }
    let rank = u32_at(12) as usize;
    let header = 16 + 8 * rank;
    if rank == 0 || rank > 2 || bytes.len() < header {
        return Err(bad("unsupported rank"));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| u64::from_le_bytes(bytes[16 + 8 * i..24 + 8 * i].try_into().unwrap()) as usize)
        .collect();
    let (rows, cols) = if rank == 1 { (1, dims[0]) } else { (dims[0], dims[1]) };
    let payload = &bytes[header..];
    if payload.len() != 4 * rows * cols {
        return Err(bad("payload size does not match dims"));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    Ok(Tensor::from_vec(rows, cols, data))
}

pub fn save_checkpoint<T: Scalar>(
    dir: &Path,
    params: &ModelParameters<T>,
    vocab_hash: u64,
    step: u64,
    metric: Option<f64>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = CheckpointManifest {
        config: params.config.clone(),
        vocab_hash: format!("{vocab_hash:016x}"),
        step,
        metric,
        tensors: params.names().to_vec(),
    };
    for (name, t) in params.names().iter().zip(params.tensors()) {
        let path = dir.join(format!("{name}.bin"));
        fs::write(&path, encode_tensor(t)).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<(ModelParameters<T>, CheckpointManifest)> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    let mut named = Vec::with_capacity(manifest.tensors.len());
    for name in &manifest.tensors {
        let path = dir.join(format!("{name}.bin"));
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        named.push((name.clone(), decode_tensor(&bytes)?));
    }
    let params = ModelParameters::from_tensors(&manifest.config, named)?;
    Ok((params, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_for_f32() {
        let cfg = ModelConfig {
            vocab_size: 20,
            ..ModelConfig::default()
        };
        let p = ModelParameters::<f32>::init(&cfg, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &p, 0xabc, 7, Some(12.5)).unwrap();
        let (q, m) = load_checkpoint::<f32>(dir.path()).unwrap();
        assert_eq!(p.tensors(), q.tensors());
        assert_eq!(m.step, 7);
        assert_eq!(m.vocab_hash, "0000000000000abc");
        assert_eq!(m.metric, Some(12.5));
    }

    #[test]
    fn header_layout() {
        let t = Tensor::from_vec(1, 2, vec![1.0f32, -2.0]);
        let b = encode_tensor(&t);
        assert_eq!(&b[..8], TENSOR_MAGIC);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 2);
        assert_eq!(b.len(), 16 + 16 + 8);
        assert_eq!(decode_tensor::<f32>(&b).unwrap(), t);
        assert!(decode_tensor::<f32>(&b[..b.len() - 1]).is_err());
        let mut corrupt = b.clone();
        corrupt[0] = b'X';
        assert!(decode_tensor::<f32>(&corrupt).is_err());
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let cfg = ModelConfig {
            vocab_size: 20,
            ..ModelConfig::default()
        };
        let p = ModelParameters::<f32>::init(&cfg, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &p, 0, 0, None).unwrap();
        fs::write(dir.path().join("head_del.bin"), encode_tensor(&Tensor::<f32>::zeros(3, 3))).unwrap();
        assert!(load_checkpoint::<f32>(dir.path()).is_err());
    }
}
