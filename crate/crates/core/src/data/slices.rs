//! Axis-aligned slices of a volume and the train/test split.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::volume::Volume;
use crate::conditional::Axis;
use crate::error::{Error, Result};
use crate::gaussian::Bounds;
use crate::raster::SliceSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceEntry {
    pub spec: SliceSpec,
    /// Voxel index along the slicing axis.
    pub index: usize,
    /// Row-major `height x width` intensities.
    pub image: Vec<f32>,
    pub split: Split,
}

impl SliceEntry {
    /// Stable identifier such as `z042`.
    pub fn id(&self) -> String {
        format!("{}{:03}", self.spec.axis, self.index)
    }

    pub fn image_f64(&self) -> Vec<f64> {
        self.image.iter().map(|&v| v as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceDataset {
    pub dims: [usize; 3],
    pub entries: Vec<SliceEntry>,
}

impl SliceDataset {
    pub fn bounds(&self) -> Bounds {
        Bounds::from_dims(self.dims)
    }

    pub fn axis_count(&self, axis: Axis) -> usize {
        self.entries.iter().filter(|e| e.spec.axis == axis).count()
    }

    pub fn train(&self) -> impl Iterator<Item = &SliceEntry> {
        self.entries.iter().filter(|e| e.split == Split::Train)
    }

    pub fn test(&self) -> impl Iterator<Item = &SliceEntry> {
        self.entries.iter().filter(|e| e.split == Split::Test)
    }

    pub fn axes(&self) -> Vec<Axis> {
        let mut a: Vec<Axis> = self.entries.iter().map(|e| e.spec.axis).collect();
        a.sort();
        a.dedup();
        a
    }
}

/// In-plane pixel `(iu, iv)` of slice `k` along `axis` as a voxel coordinate.
#[inline]
pub fn voxel_of(axis: Axis, k: usize, iu: usize, iv: usize) -> [usize; 3] {
    let p = axis.permutation();
    let mut x = [0usize; 3];
    x[p[0]] = iu;
    x[p[1]] = iv;
    x[p[2]] = k;
    x
}

/// One slice per voxel index along each requested axis, all labelled `Train`.
pub fn extract_slices(volume: &Volume, axes: &[Axis]) -> Result<SliceDataset> {
    if axes.is_empty() {
        return Err(Error::InvalidConfig("at least one slicing axis is required".into()));
    }
    let mut axes = axes.to_vec();
    axes.sort();
    axes.dedup();
    let mut entries = Vec::new();
    for axis in axes {
        let n = volume.dims[axis.index()];
        for k in 0..n {
            let spec = SliceSpec::for_volume(axis, k as f64 + 0.5, volume.dims);
            let mut image = Vec::with_capacity(spec.pixel_count());
            for iv in 0..spec.height {
                for iu in 0..spec.width {
                    let [x, y, z] = voxel_of(axis, k, iu, iv);
                    image.push(volume.get(x, y, z));
                }
            }
            entries.push(SliceEntry {
                spec,
                index: k,
                image,
                split: Split::Train,
            });
        }
    }
    Ok(SliceDataset {
        dims: volume.dims,
        entries,
    })
}

/// Rebuild a volume from every slice of `axis`.
pub fn assemble_axis(dataset: &SliceDataset, axis: Axis) -> Result<Volume> {
    let n = dataset.dims[axis.index()];
    let mut data = vec![f32::NAN; dataset.dims.iter().product()];
    let mut seen = vec![false; n];
    for e in dataset.entries.iter().filter(|e| e.spec.axis == axis) {
        if e.index >= n || seen[e.index] {
            return Err(Error::Contract(format!("slice {} is duplicated or out of range", e.id())));
        }
        seen[e.index] = true;
        for iv in 0..e.spec.height {
            for iu in 0..e.spec.width {
                let [x, y, z] = voxel_of(axis, e.index, iu, iv);
                data[x + dataset.dims[0] * (y + dataset.dims[1] * z)] = e.image[iv * e.spec.width + iu];
            }
        }
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(Error::Contract(format!("axis {axis} is missing slice {k}")));
    }
    Volume::new(dataset.dims, data)
}

/// Evenly spaced test indices for an axis with `n` slices.
pub fn test_indices(n: usize, test_fraction: f64, phase: f64) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let k = ((n as f64 * test_fraction).floor() as usize).clamp(1, n);
    let stride = n as f64 / k as f64;
    let offset = phase.clamp(0.0, 1.0 - f64::EPSILON) * stride;
    let mut out: Vec<usize> = (0..k)
        .map(|j| ((offset + j as f64 * stride).floor() as usize).min(n - 1))
        .collect();
    out.dedup();
    out
}

/// Label evenly spaced slices of each axis as test data. The phase of the
/// stride is drawn from `seed`, independently per axis.
pub fn split_dataset(dataset: &SliceDataset, test_fraction: f64, seed: u64) -> Result<SliceDataset> {
    if !(test_fraction > 0.0 && test_fraction < 0.5) {
        return Err(Error::InvalidConfig(format!(
            "test fraction must lie in (0, 0.5), got {test_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = dataset.clone();
    for axis in Axis::ALL {
        let phase: f64 = rng.random();
        let n = dataset.axis_count(axis);
        if n == 0 {
            continue;
        }
        let test = test_indices(n, test_fraction, phase);
        for e in out.entries.iter_mut().filter(|e| e.spec.axis == axis) {
            e.split = if test.binary_search(&e.index).is_ok() {
                Split::Test
            } else {
                Split::Train
            };
        }
    }
    Ok(out)
}
