//! The slice-dataset manifest (`dataset.json`): which volume the slices come
//! from, how they were split, and where their preview images live.
//!
//! Slice intensities are always re-extracted from the referenced volume, so
//! the PNG previews never feed back into training.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::slices::{extract_slices, SliceDataset, Split};
use super::volume::load_volume;
use crate::conditional::Axis;
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSlice {
    pub id: String,
    pub axis: Axis,
    pub index: usize,
    pub t: f64,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub png: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    /// Volume path, relative to the manifest's directory unless absolute.
    pub volume: String,
    pub dims: [usize; 3],
    pub axes: Vec<Axis>,
    pub test_fraction: f64,
    pub seed: u64,
    pub slices: Vec<ManifestSlice>,
}

impl DatasetManifest {
    pub fn describe(dataset: &SliceDataset, volume: &str, test_fraction: f64, seed: u64) -> Self {
        Self {
            version: MANIFEST_VERSION,
            volume: volume.to_string(),
            dims: dataset.dims,
            axes: dataset.axes(),
            test_fraction,
            seed,
            slices: dataset
                .entries
                .iter()
                .map(|e| ManifestSlice {
                    id: e.id(),
                    axis: e.spec.axis,
                    index: e.index,
                    t: e.spec.t,
                    split: e.split,
                    png: None,
                })
                .collect(),
        }
    }
}

fn manifest_error(path: &Path, msg: String) -> Error {
    Error::format(0, format!("{}: {msg}", path.display()))
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let m: DatasetManifest =
        serde_json::from_slice(&text).map_err(|e| manifest_error(path, format!("invalid manifest: {e}")))?;
    if m.version != MANIFEST_VERSION {
        return Err(manifest_error(path, format!("unsupported manifest version {}", m.version)));
    }
    Ok(m)
}

pub fn resolve_volume_path(manifest_path: &Path, volume: &str) -> PathBuf {
    let v = PathBuf::from(volume);
    if v.is_absolute() {
        v
    } else {
        manifest_path.parent().unwrap_or(Path::new(".")).join(v)
    }
}

/// Load the manifest, re-extract its slices from the volume and restore the
/// recorded split.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<(DatasetManifest, SliceDataset)> {
    let path = manifest_path.as_ref();
    let manifest = load_manifest(path)?;
    let volume = load_volume(resolve_volume_path(path, &manifest.volume))?;
    if volume.dims != manifest.dims {
        return Err(manifest_error(
            path,
            format!("manifest dims {:?} do not match volume dims {:?}", manifest.dims, volume.dims),
        ));
    }
    let mut dataset = extract_slices(&volume, &manifest.axes)?;
    if dataset.entries.len() != manifest.slices.len() {
        return Err(manifest_error(
            path,
            format!(
                "manifest lists {} slices, volume yields {}",
                manifest.slices.len(),
                dataset.entries.len()
            ),
        ));
    }
    for (e, s) in dataset.entries.iter_mut().zip(&manifest.slices) {
        if e.spec.axis != s.axis || e.index != s.index {
            return Err(manifest_error(path, format!("slice {} is out of order or unknown", s.id)));
        }
        e.split = s.split;
    }
    Ok((manifest, dataset))
}
