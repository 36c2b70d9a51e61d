//! Slice-conditioned factorization of a 3D Gaussian.
//!
//! For a slice orthogonal to one axis, coordinates are permuted so that the
//! slicing axis comes last. The density then factors exactly into a 1D
//! marginal along depth and a 2D conditional in the slice plane:
//!
//! ```text
//! p(u, v, t) = p(t) * p(u, v | t)
//! mu_uv|t  = mu_uv + (t - mu_t) / s_tt * s_uv,t
//! S_uv|t   = S_uv - s_uv,t s_uv,t^T / s_tt
//! ```
//!
//! The two candidate-region strategies live here as well: a fixed cube from
//! the largest principal axis, and a per-slice box from the conditional.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::eigen::max_eigenvalue;
use crate::error::{Error, Result};
use crate::gaussian::Gaussian3D;
use crate::raster::SliceSpec;

/// Conditional covariances with a smaller determinant are treated as a point.
pub const SINGULAR_DET: f64 = 1e-20;

/// Pixel-space tolerance for the point-support convention.
const POINT_SUPPORT_TOL: f64 = 1e-6;

/// Mahalanobis radius of the fixed-extent convention.
pub const THREE_SIGMA: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    /// `perm[i]` is the world axis that becomes coordinate `i`; the slicing
    /// axis is always last and the in-plane axes follow cyclically.
    pub fn permutation(self) -> [usize; 3] {
        match self {
            Axis::X => [1, 2, 0],
            Axis::Y => [2, 0, 1],
            Axis::Z => [0, 1, 2],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }

    pub fn parse(s: &str) -> Option<Axis> {
        match s.trim().to_ascii_lowercase().as_str() {
            "x" => Some(Axis::X),
            "y" => Some(Axis::Y),
            "z" => Some(Axis::Z),
            _ => None,
        }
    }

    /// Parse an axis set like `"xyz"` or `"x,z"`.
    pub fn parse_set(s: &str) -> Option<Vec<Axis>> {
        let mut out = Vec::new();
        for c in s.chars().filter(|c| !matches!(c, ',' | ' ')) {
            let a = Axis::parse(&c.to_string())?;
            if !out.contains(&a) {
                out.push(a);
            }
        }
        out.sort();
        if out.is_empty() {
            None
        } else {
            Some(out)
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Reorder coordinates so `axis` is last: `out[i][j] = sigma[p(i)][p(j)]`.
pub fn permute_for_axis(sigma: &Matrix3<f64>, mu: &[f64; 3], axis: Axis) -> (Matrix3<f64>, [f64; 3]) {
    let p = axis.permutation();
    let s = Matrix3::from_fn(|i, j| sigma[(p[i], p[j])]);
    (s, [mu[p[0]], mu[p[1]], mu[p[2]]])
}

/// Inverse of [`permute_for_axis`].
pub fn unpermute_for_axis(sigma: &Matrix3<f64>, mu: &[f64; 3], axis: Axis) -> (Matrix3<f64>, [f64; 3]) {
    let p = axis.permutation();
    let mut s = Matrix3::zeros();
    let mut m = [0.0; 3];
    for i in 0..3 {
        m[p[i]] = mu[i];
        for j in 0..3 {
            s[(p[i], p[j])] = sigma[(i, j)];
        }
    }
    (s, m)
}

/// World point for in-plane coordinates `(u, v)` on the plane at depth `t`.
pub fn unpermute_point(u: f64, v: f64, t: f64, axis: Axis) -> [f64; 3] {
    let p = axis.permutation();
    let mut x = [0.0; 3];
    x[p[0]] = u;
    x[p[1]] = v;
    x[p[2]] = t;
    x
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Marginal1D {
    pub mu_t: f64,
    pub var_t: f64,
}

impl Marginal1D {
    pub fn density(&self, t: f64) -> f64 {
        let d = t - self.mu_t;
        (-0.5 * d * d / self.var_t).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conditional2D {
    pub mu_uv: [f64; 2],
    pub cov_uv: Matrix2<f64>,
}

/// Inclusive pixel-index rectangle, or empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CandidateBox {
    pub u_min: usize,
    pub u_max: usize,
    pub v_min: usize,
    pub v_max: usize,
    pub empty: bool,
}

impl CandidateBox {
    pub const EMPTY: CandidateBox = CandidateBox {
        u_min: 0,
        u_max: 0,
        v_min: 0,
        v_max: 0,
        empty: true,
    };

    /// Box around a world-space rectangle on `slice`. With `dilate`, every
    /// pixel whose square touches the rectangle is included; otherwise only
    /// pixels whose centers lie inside it.
    pub fn from_world_extent(
        slice: &SliceSpec,
        center: [f64; 2],
        half: [f64; 2],
        dilate: bool,
    ) -> CandidateBox {
        let pad = if dilate { 0.5 } else { 0.0 };
        let size = [slice.width, slice.height];
        let mut lo = [0usize; 2];
        let mut hi = [0usize; 2];
        for k in 0..2 {
            let a = (center[k] - half[k] - slice.origin[k]) / slice.pitch - pad;
            let b = (center[k] + half[k] - slice.origin[k]) / slice.pitch + pad;
            if !(a.is_finite() && b.is_finite()) {
                return CandidateBox::EMPTY;
            }
            let first = a.ceil();
            let last = b.floor();
            if last < 0.0 || first > (size[k] - 1) as f64 || first > last {
                return CandidateBox::EMPTY;
            }
            lo[k] = first.max(0.0) as usize;
            hi[k] = (last.min((size[k] - 1) as f64)) as usize;
        }
        CandidateBox {
            u_min: lo[0],
            u_max: hi[0],
            v_min: lo[1],
            v_max: hi[1],
            empty: false,
        }
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        !self.empty && u >= self.u_min && u <= self.u_max && v >= self.v_min && v <= self.v_max
    }

    /// Number of pixels covered.
    pub fn area(&self) -> usize {
        if self.empty {
            0
        } else {
            (self.u_max - self.u_min + 1) * (self.v_max - self.v_min + 1)
        }
    }

    /// True when `self` lies inside `other`.
    pub fn is_within(&self, other: &CandidateBox) -> bool {
        self.empty
            || (!other.empty
                && self.u_min >= other.u_min
                && self.u_max <= other.u_max
                && self.v_min >= other.v_min
                && self.v_max <= other.v_max)
    }
}

/// How the conditional extent is derived for per-slice boxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtentMode {
    /// Radius solved from the density threshold; no false negatives.
    #[default]
    Exact,
    /// Radius truncated at three conditional standard deviations, pixel
    /// centers only.
    #[serde(rename = "capped3sigma")]
    Capped3Sigma,
}

/// One Gaussian restricted to the plane at depth `t` along `axis`, in
/// permuted coordinates `(u, v, t)`.
#[derive(Debug, Clone, Copy)]
pub struct SlicedGaussian {
    pub axis: Axis,
    pub t: f64,
    pub mean: [f64; 3],
    pub cov: Matrix3<f64>,
    pub marginal: Marginal1D,
    pub marginal_density: f64,
    pub conditional: Conditional2D,
    /// Inverse conditional covariance, `None` for point support.
    pub cov_uv_inv: Option<Matrix2<f64>>,
    /// Cross covariance between the plane and the slicing axis.
    pub cross: [f64; 2],
}

impl SlicedGaussian {
    pub fn from_gaussian(g: &Gaussian3D, axis: Axis, t: f64) -> Self {
        Self::new(&g.covariance(), &g.mean, axis, t)
    }

    pub fn new(cov_world: &Matrix3<f64>, mean_world: &[f64; 3], axis: Axis, t: f64) -> Self {
        let (cov, mean) = permute_for_axis(cov_world, mean_world, axis);
        let var_t = cov[(2, 2)];
        let cross = [cov[(0, 2)], cov[(1, 2)]];
        let marginal = Marginal1D {
            mu_t: mean[2],
            var_t,
        };
        let offset = (t - mean[2]) / var_t;
        let mu_uv = [mean[0] + offset * cross[0], mean[1] + offset * cross[1]];
        let b = Vector2::new(cross[0], cross[1]);
        let block = Matrix2::new(cov[(0, 0)], cov[(0, 1)], cov[(1, 0)], cov[(1, 1)]);
        let mut cov_uv = block - b * b.transpose() / var_t;
        cov_uv[(0, 1)] = 0.5 * (cov_uv[(0, 1)] + cov_uv[(1, 0)]);
        cov_uv[(1, 0)] = cov_uv[(0, 1)];
        let det = cov_uv.determinant();
        let cov_uv_inv = if det < SINGULAR_DET || cov_uv[(0, 0)] <= 0.0 {
            None
        } else {
            Some(Matrix2::new(cov_uv[(1, 1)], -cov_uv[(0, 1)], -cov_uv[(1, 0)], cov_uv[(0, 0)]) / det)
        };
        Self {
            axis,
            t,
            mean,
            cov,
            marginal,
            marginal_density: marginal.density(t),
            conditional: Conditional2D { mu_uv, cov_uv },
            cov_uv_inv,
            cross,
        }
    }

    /// Unnormalized conditional density `p(u, v | t)` at in-plane world coordinates.
    pub fn conditional_density(&self, u: f64, v: f64) -> f64 {
        let d = [u - self.conditional.mu_uv[0], v - self.conditional.mu_uv[1]];
        match &self.cov_uv_inv {
            Some(inv) => {
                let q = d[0] * (inv[(0, 0)] * d[0] + inv[(0, 1)] * d[1])
                    + d[1] * (inv[(1, 0)] * d[0] + inv[(1, 1)] * d[1]);
                (-0.5 * q.max(0.0)).exp()
            }
            None => {
                if d[0].abs() <= POINT_SUPPORT_TOL && d[1].abs() <= POINT_SUPPORT_TOL {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Full density `p(t) p(u, v | t)`.
    pub fn density(&self, u: f64, v: f64) -> f64 {
        if self.marginal_density == 0.0 {
            return 0.0;
        }
        self.marginal_density * self.conditional_density(u, v)
    }

    /// Method 1: the cube of half-width `3 sqrt(lambda_max)` projected onto
    /// the slice. The slice is treated as a slab one pixel pitch thick.
    pub fn method1_box(&self, slice: &SliceSpec, lambda_max: f64) -> CandidateBox {
        let r = THREE_SIGMA * lambda_max.max(0.0).sqrt();
        if (self.t - self.mean[2]).abs() > r + 0.5 * slice.pitch {
            return CandidateBox::EMPTY;
        }
        CandidateBox::from_world_extent(slice, [self.mean[0], self.mean[1]], [r, r], true)
    }

    /// Method 2: the bounding box of `{p(u, v, t) >= epsilon}` on this slice.
    pub fn method2_box(&self, slice: &SliceSpec, epsilon: f64, mode: ExtentMode) -> CandidateBox {
        let m = self.marginal_density;
        if m <= epsilon {
            return CandidateBox::EMPTY;
        }
        let mut r = (2.0 * (m / epsilon).ln()).sqrt();
        let dilate = match mode {
            ExtentMode::Exact => true,
            ExtentMode::Capped3Sigma => {
                r = r.min(THREE_SIGMA);
                false
            }
        };
        let cov = &self.conditional.cov_uv;
        let half = match self.cov_uv_inv {
            Some(_) => [r * cov[(0, 0)].max(0.0).sqrt(), r * cov[(1, 1)].max(0.0).sqrt()],
            None => [0.0, 0.0],
        };
        CandidateBox::from_world_extent(slice, self.conditional.mu_uv, half, dilate)
    }
}

pub fn marginal(g: &Gaussian3D, axis: Axis, t: f64) -> (Marginal1D, f64) {
    let (cov, mean) = permute_for_axis(&g.covariance(), &g.mean, axis);
    let m = Marginal1D {
        mu_t: mean[2],
        var_t: cov[(2, 2)],
    };
    (m, m.density(t))
}

pub fn condition_on_depth(g: &Gaussian3D, axis: Axis, t: f64) -> Conditional2D {
    SlicedGaussian::from_gaussian(g, axis, t).conditional
}

/// Density at in-plane `(u, v)` on the slice at depth `t`, evaluated through
/// the marginal/conditional factorization.
pub fn factorized_density(g: &Gaussian3D, u: f64, v: f64, t: f64, axis: Axis) -> f64 {
    SlicedGaussian::from_gaussian(g, axis, t).density(u, v)
}

pub fn bbox_method1(g: &Gaussian3D, slice: &SliceSpec) -> CandidateBox {
    let cov = g.covariance();
    let lambda = max_eigenvalue(&cov).expect("covariance is symmetric by construction");
    SlicedGaussian::new(&cov, &g.mean, slice.axis, slice.t).method1_box(slice, lambda)
}

pub fn bbox_method2(g: &Gaussian3D, slice: &SliceSpec, epsilon: f64, mode: ExtentMode) -> Result<CandidateBox> {
    check_epsilon(epsilon)?;
    Ok(SlicedGaussian::from_gaussian(g, slice.axis, slice.t).method2_box(slice, epsilon, mode))
}

pub(crate) fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "density threshold must lie in (0, 1), got {epsilon}"
        )))
    }
}

/// In-plane and depth components of `Sigma^-1 (x - mu)` in permuted
/// coordinates, computed from the factorization. Used by the backward pass.
pub(crate) fn whitened_offset(s: &SlicedGaussian, u: f64, v: f64) -> Option<Vector3<f64>> {
    let inv = s.cov_uv_inv?;
    let d = Vector2::new(u - s.conditional.mu_uv[0], v - s.conditional.mu_uv[1]);
    let w = inv * d;
    let dt = s.t - s.mean[2];
    let wb = w[0] * s.cross[0] + w[1] * s.cross[1];
    Some(Vector3::new(w[0], w[1], (dt - wb) / s.marginal.var_t))
}
