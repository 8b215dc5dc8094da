//! Checkpoint serialization.
//!
//! A checkpoint is a JSON manifest plus a sibling raw blob:
//!
//! * `<path>`: the manifest, with magic string `"ACRSC1"`, a format
//!   version, the architecture, and a tensor table (name, shape, dtype,
//!   element offset, element count) in canonical order.
//! * `<path>.bin`: all tensor data concatenated in table order as
//!   little-endian IEEE-754 `f64`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::icnn::{IcnnArch, IcnnParams, LayerKind, ParamSet};

pub const MAGIC: &str = "ACRSC1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    /// Offset into the blob, in elements.
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    magic: String,
    version: u32,
    arch: IcnnArch,
    tensors: Vec<TensorEntry>,
    blob: String,
}

fn tensor_shape(arch: &IcnnArch, name: &str) -> Vec<usize> {
    // Descriptive shapes for the manifest; storage is flat either way.
    let parse_layer = |n: &str| -> Option<usize> {
        n.strip_prefix("layer")?.split('.').next()?.parse().ok()
    };
    if name == "readout" {
        return vec![arch.readout_len()];
    }
    let k = parse_layer(name).expect("canonical tensor name");
    let field = name.split('.').nth(1).unwrap();
    match arch.layers[k] {
        LayerKind::Dense { width } => match field {
            "w_x" => vec![width, arch.input_len()],
            "w_z" => {
                let prev = match arch.layers[k - 1] {
                    LayerKind::Dense { width } => width,
                    _ => unreachable!(),
                };
                vec![width, prev]
            }
            _ => vec![width],
        },
        LayerKind::Conv { channels, kernel } => match field {
            "w_x" => vec![channels, 1, kernel, kernel],
            "w_z" => {
                let prev = match arch.layers[k - 1] {
                    LayerKind::Conv { channels, .. } => channels,
                    _ => unreachable!(),
                };
                vec![channels, prev, kernel, kernel]
            }
            _ => vec![channels],
        },
    }
}

/// Write `params` to `path` (manifest) and `path.bin` (blob).
pub fn save_params(params: &IcnnParams, path: &Path) -> Result<()> {
    let blob_path = blob_path_for(path);
    let mut tensors = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    for (name, data) in params.set.tensors() {
        tensors.push(TensorEntry {
            shape: tensor_shape(&params.arch, &name),
            name,
            dtype: "f64".to_string(),
            offset,
            len: data.len(),
        });
        offset += data.len();
        for v in data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        magic: MAGIC.to_string(),
        version: FORMAT_VERSION,
        arch: params.arch.clone(),
        tensors,
        blob: blob_path
            .file_name()
            .unwrap()
            .to_string_lossy()
            .into_owned(),
    };
    fs::write(path, serde_json::to_vec_pretty(&manifest)?)?;
    fs::write(&blob_path, blob)?;
    Ok(())
}

fn blob_path_for(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".bin");
    PathBuf::from(os)
}

/// Read a checkpoint written by [`save_params`], validating the magic
/// string, format version, dtype, offsets, and blob length.
pub fn load_params(path: &Path) -> Result<IcnnParams> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(path)?)?;
    if manifest.magic != MAGIC {
        return Err(Error::CheckpointMagic {
            expected: MAGIC.to_string(),
            got: manifest.magic,
        });
    }
    if manifest.version != FORMAT_VERSION {
        return Err(Error::CheckpointCorrupt(format!(
            "unsupported format version {}",
            manifest.version
        )));
    }
    manifest.arch.validate()?;

    let blob_path = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.blob);
    let blob = fs::read(&blob_path)?;

    let mut set = ParamSet::zeros_like(&manifest.arch);
    let expected = set.tensors();
    if expected.len() != manifest.tensors.len() {
        return Err(Error::CheckpointCorrupt(format!(
            "expected {} tensors, manifest lists {}",
            expected.len(),
            manifest.tensors.len()
        )));
    }
    let mut flat: Vec<f64> = Vec::with_capacity(set.len());
    let mut cursor = 0usize;
    for ((name, data), entry) in expected.iter().zip(manifest.tensors.iter()) {
        if &entry.name != name {
            return Err(Error::CheckpointCorrupt(format!(
                "tensor order mismatch: expected {name}, found {}",
                entry.name
            )));
        }
        if entry.dtype != "f64" {
            return Err(Error::CheckpointCorrupt(format!(
                "tensor {name} has dtype {}, expected f64",
                entry.dtype
            )));
        }
        if entry.len != data.len() || entry.shape.iter().product::<usize>() != data.len() {
            return Err(Error::ShapeMismatch {
                context: "checkpoint tensor",
                expected: vec![data.len()],
                got: entry.shape.clone(),
            });
        }
        if entry.offset != cursor {
            return Err(Error::CheckpointCorrupt(format!(
                "tensor {name} offset {} does not match cursor {cursor}",
                entry.offset
            )));
        }
        cursor += entry.len;
        let byte_start = entry.offset * 8;
        let byte_end = byte_start + entry.len * 8;
        if byte_end > blob.len() {
            return Err(Error::CheckpointCorrupt(format!(
                "blob truncated: tensor {name} needs bytes up to {byte_end}, blob holds {}",
                blob.len()
            )));
        }
        for chunk in blob[byte_start..byte_end].chunks_exact(8) {
            flat.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
    }
    if blob.len() != cursor * 8 {
        return Err(Error::CheckpointCorrupt(format!(
            "blob length {} does not match manifest total {}",
            blob.len(),
            cursor * 8
        )));
    }
    set.assign_from_flat(&flat)?;
    Ok(IcnnParams {
        arch: manifest.arch,
        set,
    })
}
