//! IGS1 checkpoints.
//!
//! | offset | size   | field                                         |
//! |--------|--------|-----------------------------------------------|
//! | 0      | 4      | magic `IGS1`                                  |
//! | 4      | 4      | format version (u32, currently 1)             |
//! | 8      | 8      | Gaussian count `n` (u64)                      |
//! | 16     | 48     | bounds `min[3]`, `max[3]` (f64)               |
//! | 64     | 48 n   | f32 arrays: mean `3n`, log-scale `3n`,        |
//! |        |        | rotation `4n` (w first), opacity `n`,         |
//! |        |        | intensity `n` (both pre-activation)           |
//!
//! Everything is little-endian. A JSON sidecar (`<path>.json`) mirrors the
//! header for humans; loading ignores it.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gaussian::{Bounds, Gaussian3D, GaussianCloud, SCALE_FLOOR};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"IGS1";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 64;
const FLOATS_PER_GAUSSIAN: usize = 12;

pub fn encode_checkpoint(cloud: &GaussianCloud) -> Vec<u8> {
    let n = cloud.len();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * FLOATS_PER_GAUSSIAN * n);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    let b = cloud.bounds();
    for v in b.min.iter().chain(&b.max) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut put = |v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());
    cloud.means().iter().flatten().for_each(|&v| put(v));
    cloud.log_scales().iter().flatten().for_each(|&v| put(v));
    cloud.rotations().iter().flatten().for_each(|&v| put(v));
    cloud.opacity_raw().iter().for_each(|&v| put(v));
    cloud.intensity_raw().iter().for_each(|&v| put(v));
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<GaussianCloud> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            bytes.len() as u64,
            format!("file too short for IGS1 header ({HEADER_LEN} bytes)"),
        ));
    }
    if &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(Error::format(0, format!("bad magic {:?}, expected \"IGS1\"", &bytes[0..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let min = [f64_at(16), f64_at(24), f64_at(32)];
    let max = [f64_at(40), f64_at(48), f64_at(56)];
    let bounds = Bounds::new(min, max);
    if !bounds.is_valid() {
        return Err(Error::format(16, format!("invalid bounds {min:?}..{max:?}")));
    }
    let expected = (n as u128) * (4 * FLOATS_PER_GAUSSIAN) as u128 + HEADER_LEN as u128;
    if (bytes.len() as u128) < expected {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated payload: {n} Gaussians need {expected} bytes, found {}", bytes.len()),
        ));
    }
    if (bytes.len() as u128) > expected {
        return Err(Error::format(
            expected as u64,
            format!("{} trailing bytes after payload", bytes.len() as u128 - expected),
        ));
    }
    let n = n as usize;
    let floats: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if let Some(i) = floats.iter().position(|v| !v.is_finite()) {
        return Err(Error::format((HEADER_LEN + 4 * i) as u64, "non-finite parameter"));
    }
    let (means, rest) = floats.split_at(3 * n);
    let (log_scales, rest) = rest.split_at(3 * n);
    let (rotations, rest) = rest.split_at(4 * n);
    let (opacity, intensity) = rest.split_at(n);
    let floor = (SCALE_FLOOR.ln() as f32) as f64;
    let mut cloud = GaussianCloud::new(bounds);
    for i in 0..n {
        let q = [rotations[4 * i], rotations[4 * i + 1], rotations[4 * i + 2], rotations[4 * i + 3]];
        if q.iter().map(|v| v * v).sum::<f64>() < 1e-12 {
            let at = HEADER_LEN + 4 * (6 * n + 4 * i);
            return Err(Error::format(at as u64, format!("Gaussian {i} has a zero rotation quaternion")));
        }
        let ls = [log_scales[3 * i], log_scales[3 * i + 1], log_scales[3 * i + 2]];
        if ls.iter().any(|&v| v < floor) {
            let at = HEADER_LEN + 4 * (3 * n + 3 * i);
            return Err(Error::format(at as u64, format!("Gaussian {i} has a scale below the floor")));
        }
        cloud.push(Gaussian3D {
            mean: [means[3 * i], means[3 * i + 1], means[3 * i + 2]],
            log_scale: ls,
            rotation: q,
            opacity_raw: opacity[i],
            intensity_raw: intensity[i],
        });
    }
    Ok(cloud)
}

#[derive(Serialize)]
struct Sidecar {
    format: &'static str,
    version: u32,
    count: usize,
    bounds: Bounds,
    layout: [&'static str; 5],
    dtype: &'static str,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Write the checkpoint and its JSON sidecar.
pub fn save_checkpoint(cloud: &GaussianCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(cloud)).map_err(|e| Error::io(path, e))?;
    let side = Sidecar {
        format: "IGS1",
        version: CHECKPOINT_VERSION,
        count: cloud.len(),
        bounds: cloud.bounds(),
        layout: ["mean", "log_scale", "rotation_wxyz", "opacity_logit", "intensity_logit"],
        dtype: "f32",
    };
    let sp = sidecar_path(path);
    let json = serde_json::to_vec_pretty(&side).expect("sidecar serializes");
    std::fs::write(&sp, json).map_err(|e| Error::io(sp, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<GaussianCloud> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{init_grid_cloud, InitConfig};

    #[test]
    fn round_trip_is_bitwise() {
        let cloud = init_grid_cloud(3, Bounds::from_dims([6, 6, 9]), &InitConfig::default()).unwrap();
        let bytes = encode_checkpoint(&cloud);
        assert_eq!(bytes.len(), 64 + 48 * 27);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, cloud);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn empty_cloud_round_trips() {
        let cloud = GaussianCloud::new(Bounds::from_dims([4, 4, 4]));
        assert_eq!(decode_checkpoint(&encode_checkpoint(&cloud)).unwrap(), cloud);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let cloud = init_grid_cloud(2, Bounds::from_dims([4, 4, 4]), &InitConfig::default()).unwrap();
        let bytes = encode_checkpoint(&cloud);
        for cut in [0, 10, 63, 64, bytes.len() - 1] {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Format { .. })));
        }
        let mut long = bytes.clone();
        long.extend_from_slice(&[0; 4]);
        assert!(decode_checkpoint(&long).is_err());
        let mut nan = bytes.clone();
        nan[64..68].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode_checkpoint(&nan).unwrap_err().to_string().contains("non-finite"));
        let mut ver = bytes;
        ver[4] = 2;
        assert!(decode_checkpoint(&ver).unwrap_err().to_string().contains("version"));
    }
}
