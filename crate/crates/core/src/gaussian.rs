//! Anisotropic 3D Gaussian primitives and the optimizable cloud.
//!
//! Parameters are stored raw (pre-activation): log standard deviations,
//! a w-first quaternion, and pre-sigmoid opacity and intensity. The
//! covariance is `R diag(exp(log_scale))^2 R^T`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible per-axis standard deviation, in world units.
pub const SCALE_FLOOR: f64 = 1e-4;

/// Margin (fraction of each extent) beyond the world bounds in which means may live.
pub const BOUNDS_MARGIN: f64 = 0.1;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
pub fn log_scale_floor() -> f64 {
    SCALE_FLOOR.ln()
}

/// Axis-aligned box in voxel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Bounds {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    /// Bounds `[0, n]` along each axis for a volume of the given dimensions.
    pub fn from_dims(dims: [usize; 3]) -> Self {
        Self {
            min: [0.0; 3],
            max: [dims[0] as f64, dims[1] as f64, dims[2] as f64],
        }
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn max_extent(&self) -> f64 {
        let e = self.extent();
        e[0].max(e[1]).max(e[2])
    }

    pub fn is_valid(&self) -> bool {
        self.extent().iter().all(|&e| e.is_finite() && e > 0.0)
            && self.min.iter().all(|v| v.is_finite())
    }

    pub fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    /// Bounds grown by `fraction` of the extent on every side.
    pub fn expanded(&self, fraction: f64) -> Bounds {
        let e = self.extent();
        let mut out = *self;
        for k in 0..3 {
            out.min[k] -= fraction * e[k];
            out.max[k] += fraction * e[k];
        }
        out
    }
}

/// One anisotropic primitive in raw parameter space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian3D {
    pub mean: [f64; 3],
    pub log_scale: [f64; 3],
    /// Quaternion `(w, x, y, z)`; normalized on use.
    pub rotation: [f64; 4],
    pub opacity_raw: f64,
    pub intensity_raw: f64,
}

impl Gaussian3D {
    /// Isotropic, unrotated Gaussian with the given activated opacity and intensity.
    pub fn isotropic(mean: [f64; 3], scale: f64, opacity: f64, intensity: f64) -> Self {
        Self {
            mean,
            log_scale: [scale.ln(); 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_raw: logit(opacity),
            intensity_raw: logit(intensity),
        }
    }

    pub fn scales(&self) -> [f64; 3] {
        [
            self.log_scale[0].exp(),
            self.log_scale[1].exp(),
            self.log_scale[2].exp(),
        ]
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_raw)
    }

    pub fn intensity(&self) -> f64 {
        sigmoid(self.intensity_raw)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        // Stored rotations are never zero: the cloud renormalizes them after every update.
        quaternion_to_rotation(self.rotation).unwrap_or_else(|_| Matrix3::identity())
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        build_covariance(self)
    }
}

/// Rotation matrix of a (not necessarily unit) w-first quaternion.
pub fn quaternion_to_rotation(q: [f64; 4]) -> Result<Matrix3<f64>> {
    let n = normalize_quaternion(q)?;
    let [w, x, y, z] = n;
    Ok(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

pub fn normalize_quaternion(q: [f64; 4]) -> Result<[f64; 4]> {
    let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return Err(Error::Degenerate(format!(
            "quaternion {q:?} has zero or non-finite norm"
        )));
    }
    Ok([q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm])
}

/// Pull a gradient with respect to the rotation matrix back onto the raw
/// (unnormalized) quaternion.
pub fn rotation_vjp(q: [f64; 4], d_rot: &Matrix3<f64>) -> [f64; 4] {
    let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return [0.0; 4];
    }
    let [w, x, y, z] = [q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm];
    let g = d_rot;
    let dw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    let dx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let unit = [w, x, y, z];
    let dn = [dw, dx, dy, dz];
    let radial: f64 = unit.iter().zip(&dn).map(|(a, b)| a * b).sum();
    [
        (dn[0] - radial * unit[0]) / norm,
        (dn[1] - radial * unit[1]) / norm,
        (dn[2] - radial * unit[2]) / norm,
        (dn[3] - radial * unit[3]) / norm,
    ]
}

pub fn build_covariance(g: &Gaussian3D) -> Matrix3<f64> {
    let r = g.rotation_matrix();
    let s = g.scales();
    let d = Vector3::new(s[0] * s[0], s[1] * s[1], s[2] * s[2]);
    let sigma = r * Matrix3::from_diagonal(&d) * r.transpose();
    // Symmetrize away rounding so downstream symmetry checks see an exact mirror.
    (sigma + sigma.transpose()) * 0.5
}

/// Inverse covariance assembled directly from the factors, `R diag(s^-2) R^T`.
pub fn precision_matrix(g: &Gaussian3D) -> Matrix3<f64> {
    let r = g.rotation_matrix();
    let s = g.scales();
    let d = Vector3::new(1.0 / (s[0] * s[0]), 1.0 / (s[1] * s[1]), 1.0 / (s[2] * s[2]));
    let p = r * Matrix3::from_diagonal(&d) * r.transpose();
    (p + p.transpose()) * 0.5
}

/// Unnormalized density `exp(-1/2 (x-mu)^T Sigma^-1 (x-mu))`.
pub fn evaluate_density(g: &Gaussian3D, x: [f64; 3]) -> f64 {
    let d = Vector3::new(x[0] - g.mean[0], x[1] - g.mean[1], x[2] - g.mean[2]);
    let q = d.dot(&(precision_matrix(g) * d));
    (-0.5 * q.max(0.0)).exp()
}

/// Defaults applied to every Gaussian created by [`init_grid_cloud`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    pub opacity: f64,
    pub intensity: f64,
    /// Initial standard deviation as a fraction of the grid spacing.
    pub scale_fraction: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            opacity: 0.1,
            intensity: 0.5,
            scale_fraction: 0.5,
        }
    }
}

/// Per-Gaussian gradient with respect to the raw parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GaussianGrad {
    pub mean: [f64; 3],
    pub log_scale: [f64; 3],
    pub rotation: [f64; 4],
    pub opacity_raw: f64,
    pub intensity_raw: f64,
}

impl GaussianGrad {
    pub const LEN: usize = 12;

    pub fn to_array(&self) -> [f64; Self::LEN] {
        let mut a = [0.0; Self::LEN];
        a[0..3].copy_from_slice(&self.mean);
        a[3..6].copy_from_slice(&self.log_scale);
        a[6..10].copy_from_slice(&self.rotation);
        a[10] = self.opacity_raw;
        a[11] = self.intensity_raw;
        a
    }

    pub fn add_assign(&mut self, o: &GaussianGrad) {
        for k in 0..3 {
            self.mean[k] += o.mean[k];
            self.log_scale[k] += o.log_scale[k];
        }
        for k in 0..4 {
            self.rotation[k] += o.rotation[k];
        }
        self.opacity_raw += o.opacity_raw;
        self.intensity_raw += o.intensity_raw;
    }

    pub fn mean_norm(&self) -> f64 {
        self.mean.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Gradients for a whole cloud, one entry per Gaussian.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CloudGradients {
    pub grads: Vec<GaussianGrad>,
}

impl CloudGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            grads: vec![GaussianGrad::default(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn is_all_zero(&self) -> bool {
        self.grads
            .iter()
            .all(|g| g.to_array().iter().all(|&v| v == 0.0))
    }
}

/// The optimizable scene: parallel parameter arrays plus densification statistics.
///
/// All arrays share one length; every mutation goes through methods that keep
/// them in lockstep.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    means: Vec<[f64; 3]>,
    log_scales: Vec<[f64; 3]>,
    rotations: Vec<[f64; 4]>,
    opacity_raw: Vec<f64>,
    intensity_raw: Vec<f64>,
    grad_accum_sum: Vec<f64>,
    grad_accum_count: Vec<u32>,
    bounds: Bounds,
}

impl GaussianCloud {
    pub fn new(bounds: Bounds) -> Self {
        Self {
            means: Vec::new(),
            log_scales: Vec::new(),
            rotations: Vec::new(),
            opacity_raw: Vec::new(),
            intensity_raw: Vec::new(),
            grad_accum_sum: Vec::new(),
            grad_accum_count: Vec::new(),
            bounds,
        }
    }

    pub fn from_gaussians(bounds: Bounds, gaussians: impl IntoIterator<Item = Gaussian3D>) -> Self {
        let mut cloud = Self::new(bounds);
        for g in gaussians {
            cloud.push(g);
        }
        cloud
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn push(&mut self, g: Gaussian3D) {
        self.means.push(g.mean);
        self.log_scales.push(g.log_scale);
        self.rotations.push(g.rotation);
        self.opacity_raw.push(g.opacity_raw);
        self.intensity_raw.push(g.intensity_raw);
        self.grad_accum_sum.push(0.0);
        self.grad_accum_count.push(0);
    }

    pub fn get(&self, i: usize) -> Gaussian3D {
        Gaussian3D {
            mean: self.means[i],
            log_scale: self.log_scales[i],
            rotation: self.rotations[i],
            opacity_raw: self.opacity_raw[i],
            intensity_raw: self.intensity_raw[i],
        }
    }

    pub fn set(&mut self, i: usize, g: Gaussian3D) {
        self.means[i] = g.mean;
        self.log_scales[i] = g.log_scale;
        self.rotations[i] = g.rotation;
        self.opacity_raw[i] = g.opacity_raw;
        self.intensity_raw[i] = g.intensity_raw;
    }

    pub fn iter(&self) -> impl Iterator<Item = Gaussian3D> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    pub fn means(&self) -> &[[f64; 3]] {
        &self.means
    }

    pub fn log_scales(&self) -> &[[f64; 3]] {
        &self.log_scales
    }

    pub fn rotations(&self) -> &[[f64; 4]] {
        &self.rotations
    }

    pub fn opacity_raw(&self) -> &[f64] {
        &self.opacity_raw
    }

    pub fn intensity_raw(&self) -> &[f64] {
        &self.intensity_raw
    }

    /// Running mean of the mean-position gradient norm since the last reset.
    pub fn grad_accum_norm(&self) -> Vec<f64> {
        self.grad_accum_sum
            .iter()
            .zip(&self.grad_accum_count)
            .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect()
    }

    /// Fold one backward pass into the densification statistics. Gaussians
    /// that received no gradient are not counted.
    pub fn accumulate_grad_norms(&mut self, grads: &[(usize, GaussianGrad)]) {
        for (i, g) in grads {
            let n = g.mean_norm();
            if n > 0.0 {
                self.grad_accum_sum[*i] += n;
                self.grad_accum_count[*i] += 1;
            }
        }
    }

    pub fn reset_grad_accum(&mut self) {
        self.grad_accum_sum.iter_mut().for_each(|v| *v = 0.0);
        self.grad_accum_count.iter_mut().for_each(|v| *v = 0);
    }

    /// Keep only the Gaussians for which `keep` is true; returns the kept
    /// original indices in order.
    pub fn retain(&mut self, keep: &[bool]) -> Vec<usize> {
        assert_eq!(keep.len(), self.len(), "retain mask length mismatch");
        let kept: Vec<usize> = (0..self.len()).filter(|&i| keep[i]).collect();
        self.reorder(&kept);
        kept
    }

    /// Rebuild the arrays from `source` indices (duplicates allowed).
    pub(crate) fn reorder(&mut self, source: &[usize]) {
        fn pick<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
            idx.iter().map(|&i| v[i]).collect()
        }
        self.means = pick(&self.means, source);
        self.log_scales = pick(&self.log_scales, source);
        self.rotations = pick(&self.rotations, source);
        self.opacity_raw = pick(&self.opacity_raw, source);
        self.intensity_raw = pick(&self.intensity_raw, source);
        self.grad_accum_sum = pick(&self.grad_accum_sum, source);
        self.grad_accum_count = pick(&self.grad_accum_count, source);
    }

    /// Enforce the parameter invariants: scale floor and unit quaternions.
    pub fn enforce_invariants(&mut self) {
        let floor = log_scale_floor();
        for ls in &mut self.log_scales {
            for v in ls.iter_mut() {
                if *v < floor {
                    *v = floor;
                }
            }
        }
        for q in &mut self.rotations {
            *q = normalize_quaternion(*q).unwrap_or([1.0, 0.0, 0.0, 0.0]);
        }
    }

    /// Round every parameter to the f32 storage precision of the checkpoint
    /// format, so that a saved cloud reloads bit-identically.
    pub fn snap_to_storage(&mut self) {
        fn snap(v: &mut f64) {
            *v = *v as f32 as f64;
        }
        self.means.iter_mut().flatten().for_each(snap);
        self.log_scales.iter_mut().flatten().for_each(snap);
        self.rotations.iter_mut().flatten().for_each(snap);
        self.opacity_raw.iter_mut().for_each(snap);
        self.intensity_raw.iter_mut().for_each(snap);
        // Rounding may nudge a log-scale under the floor by one ulp.
        let floor = log_scale_floor();
        for v in self.log_scales.iter_mut().flatten() {
            if *v < floor {
                *v = (floor as f32).next_up() as f64;
            }
        }
    }

    /// Apply `f` to every Gaussian's raw parameters, in place.
    pub fn update_each(&mut self, mut f: impl FnMut(usize, &mut Gaussian3D)) {
        for i in 0..self.len() {
            let mut g = self.get(i);
            f(i, &mut g);
            self.set(i, g);
        }
    }
}

/// `resolution^3` Gaussians at the centers of a regular grid over `bounds`.
pub fn init_grid_cloud(resolution: usize, bounds: Bounds, defaults: &InitConfig) -> Result<GaussianCloud> {
    if resolution < 2 {
        return Err(Error::InvalidConfig(format!(
            "grid resolution must be at least 2, got {resolution}"
        )));
    }
    if !bounds.is_valid() {
        return Err(Error::InvalidConfig(format!(
            "grid bounds must have positive finite extent, got {bounds:?}"
        )));
    }
    if !(defaults.opacity > 0.0 && defaults.opacity < 1.0)
        || !(defaults.intensity > 0.0 && defaults.intensity < 1.0)
        || !(defaults.scale_fraction > 0.0)
    {
        return Err(Error::InvalidConfig(format!(
            "initial opacity and intensity must lie in (0,1) and scale fraction be positive, got {defaults:?}"
        )));
    }
    let extent = bounds.extent();
    let spacing = extent.map(|e| e / resolution as f64);
    let log_scale = spacing.map(|s| (s * defaults.scale_fraction).max(SCALE_FLOOR).ln());
    let opacity_raw = logit(defaults.opacity);
    let intensity_raw = logit(defaults.intensity);

    let mut cloud = GaussianCloud::new(bounds);
    for k in 0..resolution {
        for j in 0..resolution {
            for i in 0..resolution {
                let idx = [i, j, k];
                let mean = [0, 1, 2].map(|a| bounds.min[a] + (idx[a] as f64 + 0.5) * spacing[a]);
                cloud.push(Gaussian3D {
                    mean,
                    log_scale,
                    rotation: [1.0, 0.0, 0.0, 0.0],
                    opacity_raw,
                    intensity_raw,
                });
            }
        }
    }
    cloud.snap_to_storage();
    Ok(cloud)
}
