//! Versioned checkpoint container.
//!
//! Layout: 10 magic bytes, a little-endian u32 header length, a JSON header
//! (format version, dtype, model config, and a table of named parameter
//! arrays with shapes and byte offsets), then the raw parameter data in
//! little-endian order. Loading rejects wrong magic, unknown format
//! versions, dtype mismatches, and any parameter-table drift against the
//! architecture the config describes.

use super::{build_model, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 10] = b"GEOUNETCK\x01";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the data section.
    offset: u64,
    /// Element count.
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    dtype: String,
    config: ModelConfig,
    params: Vec<ParamEntry>,
}

fn scalar_width(dtype: &str) -> usize {
    match dtype {
        "f32" => 4,
        _ => 8,
    }
}

/// Writes the model's config and parameters to `path`.
pub fn save_checkpoint<S: Scalar>(model: &Model<S>, path: &Path) -> Result<()> {
    let width = scalar_width(S::DTYPE);
    let mut entries = Vec::new();
    let mut data = Vec::new();
    model.visit(&mut |name, view| {
        entries.push(ParamEntry {
            name,
            shape: view.shape().to_vec(),
            offset: data.len() as u64,
            len: view.len() as u64,
        });
        for &v in view.iter() {
            match S::DTYPE {
                "f32" => data.extend_from_slice(&(v.to_f64() as f32).to_le_bytes()),
                _ => data.extend_from_slice(&v.to_f64().to_le_bytes()),
            }
        }
    });
    debug_assert!(entries.iter().all(|e| e.offset % width as u64 == 0));

    let header = Header {
        format_version: FORMAT_VERSION,
        dtype: S::DTYPE.to_string(),
        config: model.cfg.clone(),
        params: entries,
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(MAGIC)?;
    file.write_all(&(header_json.len() as u32).to_le_bytes())?;
    file.write_all(&header_json)?;
    file.write_all(&data)?;
    Ok(())
}

fn read_header(path: &Path, file: &mut std::fs::File) -> Result<Header> {
    let mut magic = [0u8; 10];
    file.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint(format!("{}: truncated magic", path.display())))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 4];
    file.read_exact(&mut len_bytes)?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    file.read_exact(&mut header_json)?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| Error::Checkpoint(format!("{}: bad header: {e}", path.display())))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: format version {} unsupported (expected {FORMAT_VERSION})",
            path.display(),
            header.format_version
        )));
    }
    Ok(header)
}

/// Reads only the scalar dtype a checkpoint was saved with, so callers can
/// pick the matching scalar type before a full load.
pub fn checkpoint_dtype(path: &Path) -> Result<String> {
    let mut file = std::fs::File::open(path)?;
    Ok(read_header(path, &mut file)?.dtype)
}

/// Reads a checkpoint back into a model of scalar type `S`.
pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<Model<S>> {
    let mut file = std::fs::File::open(path)?;
    let header = read_header(path, &mut file)?;
    if header.dtype != S::DTYPE {
        return Err(Error::Checkpoint(format!(
            "{}: dtype {} does not match requested {}",
            path.display(),
            header.dtype,
            S::DTYPE
        )));
    }
    let mut data = Vec::new();
    file.read_to_end(&mut data)?;

    let width = scalar_width(&header.dtype);
    let table: HashMap<&str, &ParamEntry> = header
        .params
        .iter()
        .map(|e| (e.name.as_str(), e))
        .collect();
    let mut model = build_model::<S>(&header.config, 0)?;
    let mut missing = Vec::new();
    let mut used = 0usize;
    let mut fill_err = None;
    model.visit_mut(&mut |name, mut view| {
        let Some(entry) = table.get(name.as_str()) else {
            missing.push(name);
            return;
        };
        used += 1;
        if entry.shape != view.shape() {
            fill_err = Some(format!(
                "parameter {name}: shape {:?} in file, {:?} in model",
                entry.shape,
                view.shape()
            ));
            return;
        }
        let start = entry.offset as usize;
        let end = start + entry.len as usize * width;
        if end > data.len() {
            fill_err = Some(format!("parameter {name}: data out of bounds"));
            return;
        }
        for (v, chunk) in view.iter_mut().zip(data[start..end].chunks_exact(width)) {
            let value = match width {
                4 => f32::from_le_bytes(chunk.try_into().expect("chunk width")) as f64,
                _ => f64::from_le_bytes(chunk.try_into().expect("chunk width")),
            };
            *v = S::from_f64(value);
        }
    });
    if let Some(e) = fill_err {
        return Err(Error::Checkpoint(format!("{}: {e}", path.display())));
    }
    if !missing.is_empty() {
        return Err(Error::Checkpoint(format!(
            "{}: parameters missing from file: {missing:?}",
            path.display()
        )));
    }
    if used != header.params.len() {
        return Err(Error::Checkpoint(format!(
            "{}: file holds {} parameters but the architecture uses {used}",
            path.display(),
            header.params.len()
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            r: 16,
            depth: 2,
            base_channels: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn round_trip_preserves_parameters_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = build_model::<f32>(&cfg(), 123).unwrap();
        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(loaded.cfg, model.cfg);
        let mut params_a = Vec::new();
        model.visit(&mut |n, v| params_a.push((n, v.to_owned())));
        let mut params_b = Vec::new();
        loaded.visit(&mut |n, v| params_b.push((n, v.to_owned())));
        assert_eq!(params_a, params_b);
    }

    #[test]
    fn dtype_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = build_model::<f32>(&cfg(), 1).unwrap();
        save_checkpoint(&model, &path).unwrap();
        let err = load_checkpoint::<f64>(&path);
        assert!(matches!(err, Err(Error::Checkpoint(msg)) if msg.contains("dtype")));
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&path),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = build_model::<f32>(&cfg(), 1).unwrap();
        save_checkpoint(&model, &path).unwrap();
        // Bump the version field inside the JSON header.
        let mut bytes = std::fs::read(&path).unwrap();
        let header_len =
            u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
        let header_str = String::from_utf8(bytes[14..14 + header_len].to_vec()).unwrap();
        let patched = header_str.replace("\"format_version\":1", "\"format_version\":9");
        assert_ne!(header_str, patched);
        bytes.splice(14..14 + header_len, patched.into_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint::<f32>(&path);
        assert!(matches!(err, Err(Error::Checkpoint(msg)) if msg.contains("version")));
    }
}
