//! Volumes and the IGV1 file format.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `IGV1`                            |
//! | 4      | 4    | header length `h` (u32)                 |
//! | 8      | h    | UTF-8 JSON header                       |
//! | 8 + h  | 4 n  | f32 payload, x fastest, then y, then z  |
//!
//! The header is `{"dims":[nx,ny,nz],"dtype":"f32","order":"x-fastest","raw":false,"metadata":{...}}`.
//! With `"raw": true` the payload holds arbitrary finite intensities, rescaled
//! to `[0, 1]` on load.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VOLUME_MAGIC: &[u8; 4] = b"IGV1";
const MAX_HEADER_LEN: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub dims: [usize; 3],
    /// Row-major with x fastest.
    pub data: Vec<f32>,
    pub metadata: BTreeMap<String, String>,
}

impl Volume {
    pub fn new(dims: [usize; 3], data: Vec<f32>) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::Contract(format!("volume dims must be at least 2 per axis, got {dims:?}")));
        }
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .ok_or_else(|| Error::Contract(format!("volume dims {dims:?} overflow")))?;
        if data.len() != n {
            return Err(Error::Contract(format!(
                "volume data has {} values, dims {dims:?} need {n}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Contract(format!(
                "volume value {} at index {i} is outside [0, 1]",
                data[i]
            )));
        }
        Ok(Self {
            dims,
            data,
            metadata: BTreeMap::new(),
        })
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, data)
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VolumeHeader {
    dims: [u64; 3],
    dtype: String,
    order: String,
    #[serde(default)]
    raw: bool,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

pub fn encode_volume(volume: &Volume) -> Vec<u8> {
    let header = VolumeHeader {
        dims: volume.dims.map(|d| d as u64),
        dtype: "f32".into(),
        order: "x-fastest".into(),
        raw: false,
        metadata: volume.metadata.clone(),
    };
    let json = serde_json::to_vec(&header).expect("volume header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + 4 * volume.data.len());
    out.extend_from_slice(VOLUME_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in &volume.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Encode unnormalized intensities with the `raw` flag set.
pub fn encode_raw_volume(dims: [usize; 3], values: &[f32]) -> Vec<u8> {
    let header = VolumeHeader {
        dims: dims.map(|d| d as u64),
        dtype: "f32".into(),
        order: "x-fastest".into(),
        raw: true,
        metadata: BTreeMap::new(),
    };
    let json = serde_json::to_vec(&header).expect("volume header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(VOLUME_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_volume(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < 8 {
        return Err(Error::format(bytes.len() as u64, "file too short for IGV1 preamble (8 bytes)"));
    }
    if &bytes[0..4] != VOLUME_MAGIC {
        return Err(Error::format(0, format!("bad magic {:?}, expected \"IGV1\"", &bytes[0..4])));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if header_len > MAX_HEADER_LEN {
        return Err(Error::format(4, format!("header length {header_len} exceeds {MAX_HEADER_LEN}")));
    }
    let payload_start = 8 + header_len;
    if bytes.len() < payload_start {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated header: need {header_len} bytes from offset 8"),
        ));
    }
    let header: VolumeHeader = serde_json::from_slice(&bytes[8..payload_start])
        .map_err(|e| Error::format(8, format!("invalid JSON header: {e}")))?;
    if header.dtype != "f32" {
        return Err(Error::format(8, format!("unsupported dtype {:?}, expected \"f32\"", header.dtype)));
    }
    if header.order != "x-fastest" {
        return Err(Error::format(8, format!("unsupported order {:?}, expected \"x-fastest\"", header.order)));
    }
    if header.dims.iter().any(|&d| d < 2) {
        return Err(Error::format(8, format!("dims {:?} must be at least 2 per axis", header.dims)));
    }
    let count = header.dims[0]
        .checked_mul(header.dims[1])
        .and_then(|v| v.checked_mul(header.dims[2]))
        .filter(|&n| n <= (usize::MAX / 4) as u64)
        .ok_or_else(|| Error::format(8, format!("dims {:?} overflow", header.dims)))? as usize;
    let expected = payload_start as u64 + 4 * count as u64;
    if (bytes.len() as u64) < expected {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated payload: expected {expected} bytes total, found {}", bytes.len()),
        ));
    }
    if (bytes.len() as u64) > expected {
        return Err(Error::format(
            expected,
            format!("{} trailing bytes after payload", bytes.len() as u64 - expected),
        ));
    }
    let mut data: Vec<f32> = bytes[payload_start..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::format((payload_start + 4 * i) as u64, "non-finite voxel value"));
    }
    let dims = header.dims.map(|d| d as usize);
    let mut metadata = header.metadata;
    if header.raw {
        let lo = data.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = data.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let range = hi as f64 - lo as f64;
        for v in &mut data {
            *v = if range > 0.0 {
                ((*v as f64 - lo as f64) / range) as f32
            } else {
                0.0
            };
        }
        metadata.insert("raw_min".into(), lo.to_string());
        metadata.insert("raw_max".into(), hi.to_string());
    } else if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::format(
            (payload_start + 4 * i) as u64,
            format!("voxel value {} outside [0, 1] in a normalized volume", data[i]),
        ));
    }
    Ok(Volume { dims, data, metadata })
}

pub fn save_volume(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_volume(volume)).map_err(|e| Error::io(path, e))
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_volume(&bytes)
}
