//! Analytic test volumes with nested internal structure.
//!
//! A phantom is a stack of concentric, co-rotated ellipsoids. Crossing the
//! boundary of shell `k` moves the intensity from the value of the shell
//! outside it to `shells[k].value`, blended over a band of half-width
//! `edge_width` with a C1 smoothstep. A weak linear ramp through the center
//! (and, for [`PhantomKind::CheckerShells`], a sinusoidal checker pattern
//! inside the outer shell) adds low-amplitude variation. Voxels sample the
//! field at their centers.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::volume::Volume;
use crate::error::{Error, Result};
use crate::gaussian::quaternion_to_rotation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    NestedEllipsoids,
    CheckerShells,
}

impl PhantomKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "nested_ellipsoids" => Some(Self::NestedEllipsoids),
            "checker_shells" => Some(Self::CheckerShells),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shell {
    pub semi_axes: [f64; 3],
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub dims: [usize; 3],
    pub center: [f64; 3],
    /// Orientation of every shell, w-first quaternion.
    pub rotation: [f64; 4],
    /// Outermost first.
    pub shells: Vec<Shell>,
    pub background: f64,
    pub edge_width: f64,
    /// Intensity change per world unit, applied relative to the center.
    pub ramp: [f64; 3],
    pub checker_period: f64,
    pub checker_amplitude: f64,
}

const SHELL_VALUES: [f64; 6] = [0.15, 0.3, 0.45, 0.6, 0.75, 0.9];

/// `0` below `-1`, `1` above `1`, C1 cubic in between.
pub fn smoothstep(x: f64) -> f64 {
    let s = ((x + 1.0) * 0.5).clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

impl PhantomSpec {
    pub fn generate(kind: PhantomKind, dims: [usize; 3], seed: u64) -> Result<Self> {
        if dims.iter().any(|&d| d < 16) {
            return Err(Error::InvalidConfig(format!("phantom dims must be at least 16 per axis, got {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let center = dims.map(|d| (d / 2) as f64 + 0.5);
        let min_dim = *dims.iter().min().unwrap() as f64;
        let edge_width = (min_dim / 40.0).max(0.75);

        // Small random tilt so shell boundaries are not axis aligned.
        let axis = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
            .normalize();
        let angle = rng.random_range(0.1f64..0.45);
        let (s, c) = (0.5 * angle).sin_cos();
        let rotation = [c, s * axis.x, s * axis.y, s * axis.z];

        let count = rng.random_range(3..=6usize);
        let outer = dims.map(|d| d as f64 * rng.random_range(0.34..0.42));
        let min_inner = 2.0 * edge_width + 1.5;
        let mut factors: Vec<[f64; 3]> = (1..count)
            .map(|_| [0, 1, 2].map(|_| rng.random_range(0.62..0.8)))
            .collect();
        let innermost = |f: &[[f64; 3]]| {
            (0..3)
                .map(|k| f.iter().fold(outer[k], |a, s| a * s[k]))
                .fold(f64::INFINITY, f64::min)
        };
        if innermost(&factors) < min_inner {
            let outer_min = outer.iter().copied().fold(f64::INFINITY, f64::min);
            let need = (min_inner / outer_min).powf(1.0 / (count - 1) as f64).min(0.85);
            for f in &mut factors {
                *f = f.map(|v| v.max(need));
            }
        }

        let mut values = SHELL_VALUES.to_vec();
        for i in (1..values.len()).rev() {
            let j = rng.random_range(0..=i);
            values.swap(i, j);
        }
        let mut shells = Vec::with_capacity(count);
        let mut axes = outer;
        for k in 0..count {
            if k > 0 {
                for a in 0..3 {
                    axes[a] *= factors[k - 1][a];
                }
            }
            shells.push(Shell {
                semi_axes: axes,
                value: values[k],
            });
        }

        let dir = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
            .normalize();
        let max_dim = *dims.iter().max().unwrap() as f64;
        let ramp_total = 0.04;
        let ramp = [dir.x, dir.y, dir.z].map(|d| d * ramp_total / max_dim);

        let (checker_period, checker_amplitude) = match kind {
            PhantomKind::NestedEllipsoids => (min_dim / 4.0, 0.0),
            PhantomKind::CheckerShells => (min_dim / 4.0, 0.06),
        };

        Ok(Self {
            kind,
            dims,
            center,
            rotation,
            shells,
            background: 0.05,
            edge_width,
            ramp,
            checker_period,
            checker_amplitude,
        })
    }

    /// Field value at world point `p`, clamped to `[0, 1]`.
    pub fn value_at(&self, p: [f64; 3]) -> f64 {
        let r = quaternion_to_rotation(self.rotation).expect("phantom rotation is a unit quaternion");
        let d = Vector3::new(p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]);
        let local = r.transpose() * d;
        let mut v = self.background;
        let mut outside = self.background;
        let mut outer_weight = 0.0;
        for (k, shell) in self.shells.iter().enumerate() {
            let a = shell.semi_axes;
            let rho = ((local.x / a[0]).powi(2) + (local.y / a[1]).powi(2) + (local.z / a[2]).powi(2)).sqrt();
            let mean_axis = (a[0] + a[1] + a[2]) / 3.0;
            let depth = (1.0 - rho) * mean_axis;
            let w = smoothstep(depth / self.edge_width);
            if k == 0 {
                outer_weight = w;
            }
            v += (shell.value - outside) * w;
            outside = shell.value;
        }
        v += self.ramp[0] * d.x + self.ramp[1] * d.y + self.ramp[2] * d.z;
        if self.checker_amplitude != 0.0 {
            let f = 2.0 * PI / self.checker_period;
            v += self.checker_amplitude * outer_weight * (f * d.x).sin() * (f * d.y).sin() * (f * d.z).sin();
        }
        v.clamp(0.0, 1.0)
    }

    pub fn render(&self) -> Result<Volume> {
        let mut vol = Volume::from_fn(self.dims, |x, y, z| {
            self.value_at([x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5]) as f32
        })?;
        vol.metadata.insert("source".into(), "phantom".into());
        vol.metadata.insert(
            "kind".into(),
            match self.kind {
                PhantomKind::NestedEllipsoids => "nested_ellipsoids",
                PhantomKind::CheckerShells => "checker_shells",
            }
            .into(),
        );
        Ok(vol)
    }
}

pub fn make_phantom(kind: PhantomKind, dims: [usize; 3], seed: u64) -> Result<Volume> {
    let spec = PhantomSpec::generate(kind, dims, seed)?;
    let mut v = spec.render()?;
    v.metadata.insert("seed".into(), seed.to_string());
    Ok(v)
}
