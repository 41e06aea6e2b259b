//! Binary model checkpoints.
//!
//! Layout: the 8-byte magic `MGDPRCK1`, a little-endian `u64` header length,
//! a JSON header with the model configuration and a tensor table, then every
//! tensor's values as little-endian `f64` in table order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Mgdpr, ModelConfig, ModelError, ModelParams};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MGDPRCK1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a model checkpoint")]
    Magic { path: PathBuf },
    #[error("{path}: corrupt checkpoint: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("{path}: checkpoint does not fit its configuration: {source}")]
    Mismatch {
        path: PathBuf,
        #[source]
        source: ModelError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Position of the first value, counted in `f64`s from the data start.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
}

pub fn to_bytes(model: &Mgdpr) -> Vec<u8> {
    let mut offset = 0;
    let tensors = model
        .params
        .names()
        .into_iter()
        .zip(model.params.flatten())
        .map(|(name, t)| {
            let entry = TensorEntry {
                name,
                shape: t.shape().to_vec(),
                offset,
                len: t.numel(),
            };
            offset += t.numel();
            entry
        })
        .collect();
    let header = serde_json::to_vec(&Header {
        config: model.config.clone(),
        tensors,
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + offset * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for t in model.params.flatten() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Mgdpr, CheckpointError> {
    let corrupt = |message: String| CheckpointError::Corrupt {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(CheckpointError::Magic { path: path.to_path_buf() });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|h| h.checked_add(16))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt(format!("header length {header_len} exceeds the file")))?;
    let header: Header =
        serde_json::from_slice(&bytes[16..header_end]).map_err(|e| corrupt(format!("header: {e}")))?;
    let data = &bytes[header_end..];
    if !data.len().is_multiple_of(8) {
        return Err(corrupt(format!("{} trailing bytes", data.len() % 8)));
    }
    let values: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();

    let mismatch = |source| CheckpointError::Mismatch {
        path: path.to_path_buf(),
        source,
    };
    header.config.validate().map_err(mismatch)?;
    let template = ModelParams::init(&header.config, 0);
    let names = template.names();
    if names.len() != header.tensors.len() {
        return Err(mismatch(ModelError::Shape(format!(
            "{} tensors stored, configuration needs {}",
            header.tensors.len(),
            names.len()
        ))));
    }
    let mut expected_offset = 0;
    let mut tensors = Vec::with_capacity(names.len());
    for (entry, name) in header.tensors.iter().zip(&names) {
        if &entry.name != name {
            return Err(corrupt(format!("tensor {:?} where {name:?} was expected", entry.name)));
        }
        if entry.offset != expected_offset || entry.len != entry.shape.iter().product::<usize>() {
            return Err(corrupt(format!("tensor {name} has an inconsistent table entry")));
        }
        let end = entry.offset + entry.len;
        let slice = values
            .get(entry.offset..end)
            .ok_or_else(|| corrupt(format!("tensor {name} runs past the data section")))?;
        if slice.iter().any(|v| !v.is_finite()) {
            return Err(corrupt(format!("tensor {name} holds non-finite values")));
        }
        tensors.push(Tensor::new(&entry.shape, slice.to_vec()).map_err(|e| corrupt(e.to_string()))?);
        expected_offset = end;
    }
    if expected_offset != values.len() {
        return Err(corrupt(format!("{} unclaimed values", values.len() - expected_offset)));
    }
    let params = template.rebuild(tensors);
    Mgdpr::from_params(header.config, params).map_err(mismatch)
}

pub fn save(model: &Mgdpr, path: &Path) -> Result<(), CheckpointError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CheckpointError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, to_bytes(model)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: &Path) -> Result<Mgdpr, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(&bytes, path)
}
