//! Binary model snapshots and training logs.
//!
//! Layout: the 8-byte magic, a little-endian `u64` header length, a JSON
//! header, then every tensor's values little-endian in header order.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::EpochLog;
use super::{Architecture, EncoderConfig, ModelParams};
use crate::corpus::vocab::Vocab;
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"AJMODEL1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    architecture: Architecture,
    config: EncoderConfig,
    vocab_size: usize,
    vocab_hash: String,
    dtype: String,
    stoplist: Vec<u32>,
    meta: BTreeMap<String, String>,
    tensors: Vec<TensorEntry>,
}

pub fn to_bytes<T: Scalar>(p: &ModelParams<T>) -> Vec<u8> {
    let mut offset = 0;
    let tensors = p
        .weights
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry {
                name: name.to_string(),
                rows: t.rows,
                cols: t.cols,
                offset,
            };
            offset += t.len();
            e
        })
        .collect();
    let header = Header {
        architecture: p.architecture,
        config: p.config,
        vocab_size: p.vocab_size,
        vocab_hash: p.vocab_hash.clone(),
        dtype: T::DTYPE.to_string(),
        stoplist: p.stoplist.clone(),
        meta: p.meta.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + offset * T::BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in p.weights.iter() {
        for &v in &t.data {
            v.write_le(&mut out);
        }
    }
    out
}

fn read_values<S: Scalar, T: Scalar>(data: &[u8], start: usize, n: usize) -> Vec<T> {
    data[start * S::BYTES..(start + n) * S::BYTES]
        .chunks_exact(S::BYTES)
        .map(|c| T::of(S::read_le(c).as_f64()))
        .collect()
}

/// Parses a snapshot, converting stored values to `T` if the dtypes differ.
pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<ModelParams<T>> {
    let bad = |m: &str| Error::Snapshot(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a model snapshot"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;
    let data = &bytes[16 + hlen..];
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(Error::Snapshot(format!("unknown dtype {other}"))),
    };
    let total: usize = header.tensors.iter().map(|t| t.rows * t.cols).sum();
    if data.len() != total * width {
        return Err(Error::Snapshot(format!(
            "expected {} data bytes, found {}",
            total * width,
            data.len()
        )));
    }
    let mut weights = ParamSet::new();
    for e in &header.tensors {
        let n = e.rows * e.cols;
        if e.offset + n > total {
            return Err(Error::Snapshot(format!("tensor {} overruns data", e.name)));
        }
        let values = if width == 4 {
            read_values::<f32, T>(data, e.offset, n)
        } else {
            read_values::<f64, T>(data, e.offset, n)
        };
        weights.insert(&e.name, Tensor::from_vec(e.rows, e.cols, values));
    }
    if !weights.all_finite() {
        return Err(bad("snapshot holds non-finite weights"));
    }
    let expected = ModelParams::<T>::init(
        header.architecture,
        header.config,
        header.vocab_size,
        "",
        None,
        0,
    )?;
    for (name, t) in expected.weights.iter() {
        match weights.get(name) {
            Some(w) if w.shape() == t.shape() => {}
            Some(w) => {
                return Err(Error::Snapshot(format!(
                    "tensor {name} has shape {:?}, config implies {:?}",
                    w.shape(),
                    t.shape()
                )))
            }
            None => return Err(Error::Snapshot(format!("missing tensor {name}"))),
        }
    }
    Ok(ModelParams {
        architecture: header.architecture,
        config: header.config,
        vocab_size: header.vocab_size,
        vocab_hash: header.vocab_hash,
        weights,
        stoplist: header.stoplist,
        meta: header.meta,
    })
}

pub fn save_snapshot<T: Scalar>(path: impl AsRef<Path>, p: &ModelParams<T>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(p)).map_err(|e| Error::io(path, e))
}

/// Loads a snapshot and checks it was trained against `vocab`.
pub fn load_snapshot<T: Scalar>(path: impl AsRef<Path>, vocab: &Vocab) -> Result<ModelParams<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let p = from_bytes(&bytes)?;
    let found = vocab.hash();
    if p.vocab_hash != found || p.vocab_size != vocab.len() {
        return Err(Error::HashMismatch {
            expected: p.vocab_hash,
            found,
        });
    }
    Ok(p)
}

pub fn write_training_log(path: impl AsRef<Path>, log: &[EpochLog]) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for e in log {
        writeln!(f, "{}", serde_json::to_string(e)?).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
