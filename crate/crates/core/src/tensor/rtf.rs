//! RTF tensor files: a JSON manifest `{"dtype":"f32le","shape":[D,H,W]}` plus a
//! raw payload of little-endian `f32` values in `(d, h, w)` row-major order.
//!
//! The manifest lives at the given path (conventionally `name.json`); the
//! payload sits next to it with the extension replaced by `.bin`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FeatureMap, Shape};
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const DTYPE: &str = "f32le";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    dtype: String,
    shape: Vec<usize>,
}

/// Payload path paired with a manifest path.
pub fn payload_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn save_tensor(f: &FeatureMap, path: &Path) -> Result<()> {
    let shape = f.shape();
    let manifest = Manifest {
        dtype: DTYPE.to_string(),
        shape: vec![shape.d, shape.h, shape.w],
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serialises");
    let mut payload = Vec::with_capacity(shape.len() * 4);
    for &v in f.as_slice() {
        payload.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write_atomic(&payload_path(path), &payload)?;
    write_atomic(path, &json)
}

pub fn load_tensor(path: &Path) -> Result<FeatureMap> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest =
        serde_json::from_slice(&text).map_err(|e| Error::format(path, e.to_string()))?;
    if manifest.dtype != DTYPE {
        return Err(Error::format(
            path,
            format!("unsupported dtype `{}`, expected `{DTYPE}`", manifest.dtype),
        ));
    }
    let [d, h, w] = manifest.shape[..] else {
        return Err(Error::format(
            path,
            format!("shape must have 3 entries, got {}", manifest.shape.len()),
        ));
    };
    if d == 0 || h == 0 || w == 0 {
        return Err(Error::format(path, "shape entries must be positive"));
    }
    let shape = Shape::new(d, h, w);

    let bin_path = payload_path(path);
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    if bytes.len() != shape.len() * 4 {
        return Err(Error::format(
            &bin_path,
            format!(
                "shape {d}x{h}x{w} needs {} f32 values, payload holds {} bytes",
                shape.len(),
                bytes.len()
            ),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    FeatureMap::new(shape, data).map_err(|e| Error::format(path, e.to_string()))
}
