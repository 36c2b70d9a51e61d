//! Slice rasterization: candidate binning, front-to-back compositing and its
//! analytic gradient.
//!
//! A pixel at in-plane position `(u, v)` on the slice at depth `t` composites
//! its candidates in order of increasing `|mu_t - t|`:
//!
//! ```text
//! I = sum_i T_i p_i a_i c_i,   T_{i+1} = T_i (1 - p_i a_i),   T_0 = 1
//! ```
//!
//! where `p_i` is the Gaussian's density at the pixel, `a_i` its activated
//! opacity and `c_i` its activated intensity. Densities below the selection
//! threshold are skipped, so the output does not depend on which candidate
//! strategy produced the bins as long as the strategy has no false negatives.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::conditional::{check_epsilon, unpermute_for_axis, whitened_offset, Axis, CandidateBox, ExtentMode, SlicedGaussian};
use crate::eigen::max_eigenvalue;
use crate::error::{Error, Result};
use crate::gaussian::{rotation_vjp, CloudGradients, GaussianCloud, GaussianGrad};

/// Compositing stops once the residual transmittance drops below this.
pub const TRANSMITTANCE_STOP: f64 = 1e-4;

pub const DEFAULT_TILE_SIZE: usize = 16;

/// An axis-aligned slice: the plane at depth `t` along `axis`, sampled on a
/// `width x height` grid. Pixel `(i, j)` has its center at
/// `origin + pitch * (i, j)` in the in-plane world coordinates `(u, v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub axis: Axis,
    pub t: f64,
    pub width: usize,
    pub height: usize,
    pub origin: [f64; 2],
    pub pitch: f64,
}

impl SliceSpec {
    pub fn new(axis: Axis, t: f64, width: usize, height: usize, origin: [f64; 2], pitch: f64) -> Self {
        Self {
            axis,
            t,
            width,
            height,
            origin,
            pitch,
        }
    }

    /// Slice through voxel centers of a volume with the given dimensions,
    /// at real-valued depth `t`.
    pub fn for_volume(axis: Axis, t: f64, dims: [usize; 3]) -> Self {
        let p = axis.permutation();
        Self::new(axis, t, dims[p[0]], dims[p[1]], [0.5, 0.5], 1.0)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn pixel_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.origin[0] + self.pitch * i as f64,
            self.origin[1] + self.pitch * j as f64,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Contract(format!(
                "slice must have at least one pixel, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.pitch > 0.0 && self.pitch.is_finite()) {
            return Err(Error::Contract(format!("slice pitch must be positive, got {}", self.pitch)));
        }
        if !(self.t.is_finite() && self.origin.iter().all(|o| o.is_finite())) {
            return Err(Error::Contract("slice depth and origin must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Fixed cube from the largest principal axis.
    M1,
    /// Per-slice box from the conditional distribution.
    #[default]
    M2,
}

impl Method {
    pub fn parse(s: &str) -> Option<Method> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m1" | "1" => Some(Method::M1),
            "m2" | "2" => Some(Method::M2),
            _ => None,
        }
    }
}

/// Candidate-selection strategy plus the activity threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Selection {
    pub method: Method,
    pub mode: ExtentMode,
    pub epsilon: f64,
}

impl Default for Selection {
    fn default() -> Self {
        Self {
            method: Method::M2,
            mode: ExtentMode::Exact,
            epsilon: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RasterSettings {
    pub selection: Selection,
    pub tile_size: usize,
    pub early_stop: bool,
}

impl Default for RasterSettings {
    fn default() -> Self {
        Self {
            selection: Selection::default(),
            tile_size: DEFAULT_TILE_SIZE,
            early_stop: true,
        }
    }
}

/// A Gaussian prepared for one slice.
#[derive(Debug, Clone, Copy)]
pub struct Splat {
    pub index: usize,
    pub sliced: SlicedGaussian,
    pub bbox: CandidateBox,
    pub opacity: f64,
    pub intensity: f64,
    pub depth_key: f64,
}

/// Per-tile candidate lists for one slice.
///
/// Splats are stored in compositing order (ascending `|mu_t - t|`, index as
/// tiebreak); each tile list holds ascending positions into `splats`, so it
/// inherits that order.
#[derive(Debug, Clone)]
pub struct TileBins {
    pub tile_size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub width: usize,
    pub height: usize,
    pub epsilon: f64,
    pub early_stop: bool,
    pub cloud_len: usize,
    splats: Vec<Splat>,
    lists: Vec<Vec<u32>>,
}

impl TileBins {
    pub fn splats(&self) -> &[Splat] {
        &self.splats
    }

    pub fn tile_count(&self) -> usize {
        self.lists.len()
    }

    /// Gaussian indices binned into tile `(tx, ty)`, in compositing order.
    pub fn tile_gaussians(&self, tx: usize, ty: usize) -> Vec<usize> {
        self.lists[ty * self.tiles_x + tx]
            .iter()
            .map(|&s| self.splats[s as usize].index)
            .collect()
    }

    /// Gaussians whose box covers pixel `(i, j)`, in compositing order.
    pub fn pixel_candidates(&self, i: usize, j: usize) -> impl Iterator<Item = &Splat> + '_ {
        let tile = (j / self.tile_size) * self.tiles_x + i / self.tile_size;
        self.lists[tile]
            .iter()
            .map(move |&s| &self.splats[s as usize])
            .filter(move |s| s.bbox.contains(i, j))
    }

    fn check_slice(&self, cloud: &GaussianCloud, slice: &SliceSpec) -> Result<()> {
        if self.width != slice.width || self.height != slice.height {
            return Err(Error::Contract(format!(
                "bins were built for a {}x{} slice, got {}x{}",
                self.width, self.height, slice.width, slice.height
            )));
        }
        if self.cloud_len != cloud.len() {
            return Err(Error::Contract(format!(
                "bins were built for {} Gaussians, cloud has {}",
                self.cloud_len,
                cloud.len()
            )));
        }
        Ok(())
    }
}

pub fn bin_gaussians(cloud: &GaussianCloud, slice: &SliceSpec, settings: &RasterSettings) -> Result<TileBins> {
    slice.validate()?;
    let sel = settings.selection;
    check_epsilon(sel.epsilon)?;
    if settings.tile_size == 0 {
        return Err(Error::InvalidConfig("tile size must be at least 1".into()));
    }
    let mut splats = Vec::new();
    for (index, g) in cloud.iter().enumerate() {
        let cov = g.covariance();
        let sliced = SlicedGaussian::new(&cov, &g.mean, slice.axis, slice.t);
        let bbox = match sel.method {
            Method::M1 => {
                let lambda = max_eigenvalue(&cov)?;
                sliced.method1_box(slice, lambda)
            }
            Method::M2 => sliced.method2_box(slice, sel.epsilon, sel.mode),
        };
        if bbox.empty {
            continue;
        }
        splats.push(Splat {
            index,
            sliced,
            bbox,
            opacity: g.opacity(),
            intensity: g.intensity(),
            depth_key: (sliced.mean[2] - slice.t).abs(),
        });
    }
    splats.sort_by(|a, b| a.depth_key.total_cmp(&b.depth_key).then(a.index.cmp(&b.index)));

    let ts = settings.tile_size;
    let tiles_x = slice.width.div_ceil(ts);
    let tiles_y = slice.height.div_ceil(ts);
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    for (slot, s) in splats.iter().enumerate() {
        for ty in s.bbox.v_min / ts..=s.bbox.v_max / ts {
            for tx in s.bbox.u_min / ts..=s.bbox.u_max / ts {
                lists[ty * tiles_x + tx].push(slot as u32);
            }
        }
    }
    Ok(TileBins {
        tile_size: ts,
        tiles_x,
        tiles_y,
        width: slice.width,
        height: slice.height,
        epsilon: sel.epsilon,
        early_stop: settings.early_stop,
        cloud_len: cloud.len(),
        splats,
        lists,
    })
}

/// Rendered intensities and residual transmittance, row-major `height x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedSlice {
    pub width: usize,
    pub height: usize,
    pub image: Vec<f64>,
    pub final_transmittance: Vec<f64>,
}

impl RenderedSlice {
    pub fn blank(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            image: vec![0.0; width * height],
            final_transmittance: vec![1.0; width * height],
        }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.image[j * self.width + i]
    }
}

/// Composite one pixel; calls `visit(slot, p, transmittance_before)` for each
/// contributing splat and returns `(intensity, final_transmittance)`.
#[inline]
fn composite_pixel(
    bins: &TileBins,
    slice: &SliceSpec,
    i: usize,
    j: usize,
    mut visit: impl FnMut(usize, f64, f64),
) -> (f64, f64) {
    let (u, v) = slice.pixel_center(i, j);
    let tile = (j / bins.tile_size) * bins.tiles_x + i / bins.tile_size;
    let mut color = 0.0;
    let mut trans = 1.0;
    for &slot in &bins.lists[tile] {
        let s = &bins.splats[slot as usize];
        if !s.bbox.contains(i, j) {
            continue;
        }
        let p = s.sliced.density(u, v);
        if p < bins.epsilon {
            continue;
        }
        let a = p * s.opacity;
        visit(slot as usize, p, trans);
        color += trans * a * s.intensity;
        trans *= 1.0 - a;
        if bins.early_stop && trans < TRANSMITTANCE_STOP {
            break;
        }
    }
    (color, trans)
}

pub fn render_slice(cloud: &GaussianCloud, slice: &SliceSpec, bins: &TileBins) -> Result<RenderedSlice> {
    bins.check_slice(cloud, slice)?;
    let mut out = RenderedSlice::blank(slice.width, slice.height);
    for j in 0..slice.height {
        for i in 0..slice.width {
            let (c, t) = composite_pixel(bins, slice, i, j, |_, _, _| {});
            out.image[j * slice.width + i] = c;
            out.final_transmittance[j * slice.width + i] = t;
        }
    }
    Ok(out)
}

/// Gradient accumulator for one splat, in the slice's permuted coordinates.
#[derive(Clone, Copy, Default)]
struct SplatAccum {
    touched: bool,
    mean: Vector3<f64>,
    cov: Matrix3<f64>,
    opacity_raw: f64,
    intensity_raw: f64,
}

/// Gradients of `L` for every Gaussian that contributed to the slice, given
/// `dL/dI` per pixel. The cloud is not modified.
pub fn backward_sparse(
    cloud: &GaussianCloud,
    slice: &SliceSpec,
    bins: &TileBins,
    dl_dimage: &[f64],
) -> Result<Vec<(usize, GaussianGrad)>> {
    bins.check_slice(cloud, slice)?;
    if dl_dimage.len() != slice.pixel_count() {
        return Err(Error::Contract(format!(
            "loss gradient has {} entries, slice has {} pixels",
            dl_dimage.len(),
            slice.pixel_count()
        )));
    }
    let mut acc = vec![SplatAccum::default(); bins.splats.len()];
    let mut trail: Vec<(usize, f64, f64)> = Vec::new();
    for j in 0..slice.height {
        for i in 0..slice.width {
            let g = dl_dimage[j * slice.width + i];
            if g == 0.0 {
                continue;
            }
            trail.clear();
            composite_pixel(bins, slice, i, j, |slot, p, t| trail.push((slot, p, t)));
            let (u, v) = slice.pixel_center(i, j);
            // Color composited behind the current splat, relative to the
            // transmittance just after it.
            let mut behind = 0.0;
            for &(slot, p, trans) in trail.iter().rev() {
                let s = &bins.splats[slot];
                let a = p * s.opacity;
                let c = s.intensity;
                let d_a = g * trans * (c - behind);
                behind = a * c + (1.0 - a) * behind;

                let e = &mut acc[slot];
                e.touched = true;
                e.intensity_raw += g * trans * a * c * (1.0 - c);
                e.opacity_raw += d_a * p * s.opacity * (1.0 - s.opacity);
                let d_p = d_a * s.opacity;
                if let Some(z) = whitened_offset(&s.sliced, u, v) {
                    let w = d_p * p;
                    e.mean += z * w;
                    e.cov += z * z.transpose() * (0.5 * w);
                }
            }
        }
    }

    let mut out = Vec::new();
    for (slot, e) in acc.iter().enumerate() {
        if !e.touched {
            continue;
        }
        let splat = &bins.splats[slot];
        let gauss = cloud.get(splat.index);
        let mean_perm = [e.mean[0], e.mean[1], e.mean[2]];
        let (d_cov, d_mean) = unpermute_for_axis(&e.cov, &mean_perm, slice.axis);
        let (d_log_scale, d_rotation) = covariance_vjp(&gauss.rotation, &gauss.scales(), &d_cov);
        out.push((
            splat.index,
            GaussianGrad {
                mean: d_mean,
                log_scale: d_log_scale,
                rotation: d_rotation,
                opacity_raw: e.opacity_raw,
                intensity_raw: e.intensity_raw,
            },
        ));
    }
    out.sort_by_key(|(i, _)| *i);
    Ok(out)
}

/// Pull `dL/dSigma` (symmetric) back onto log-scales and the raw quaternion.
pub fn covariance_vjp(q: &[f64; 4], scales: &[f64; 3], d_cov: &Matrix3<f64>) -> ([f64; 3], [f64; 4]) {
    let r = crate::gaussian::quaternion_to_rotation(*q).unwrap_or_else(|_| Matrix3::identity());
    let g = (d_cov + d_cov.transpose()) * 0.5;
    let var = Vector3::new(scales[0] * scales[0], scales[1] * scales[1], scales[2] * scales[2]);
    let rgr = r.transpose() * g * r;
    let d_log_scale = [
        2.0 * var[0] * rgr[(0, 0)],
        2.0 * var[1] * rgr[(1, 1)],
        2.0 * var[2] * rgr[(2, 2)],
    ];
    let d_rot = g * r * Matrix3::from_diagonal(&var) * 2.0;
    (d_log_scale, rotation_vjp(*q, &d_rot))
}

/// Dense gradients for every Gaussian; also folds the mean-gradient norms
/// into the cloud's densification statistics.
pub fn render_backward(
    cloud: &mut GaussianCloud,
    slice: &SliceSpec,
    bins: &TileBins,
    dl_dimage: &[f64],
) -> Result<CloudGradients> {
    let sparse = backward_sparse(cloud, slice, bins, dl_dimage)?;
    cloud.accumulate_grad_norms(&sparse);
    let mut dense = CloudGradients::zeros(cloud.len());
    for (i, g) in sparse {
        dense.grads[i] = g;
    }
    Ok(dense)
}

/// Bin and render in one call.
pub fn render(cloud: &GaussianCloud, slice: &SliceSpec, settings: &RasterSettings) -> Result<RenderedSlice> {
    let bins = bin_gaussians(cloud, slice, settings)?;
    render_slice(cloud, slice, &bins)
}
