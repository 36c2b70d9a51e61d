//! Adaptive density control: prune, split and clone.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{Gaussian3D, GaussianCloud, BOUNDS_MARGIN};

pub const SPLIT_SCALE_DIVISOR: f64 = 1.6;
pub const CLONE_JITTER: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineParams {
    pub tau_alpha: f64,
    pub tau_p: f64,
    /// Absolute threshold on the Frobenius norm of the covariance.
    pub tau_s: f64,
    /// Largest allowed scale, absolute.
    pub max_scale: f64,
    pub grid_spacing: f64,
    pub max_gaussians: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefineCounts {
    pub step: usize,
    pub pruned: usize,
    pub split: usize,
    pub cloned: usize,
    pub total: usize,
}

#[derive(Clone, Copy, PartialEq)]
enum Action {
    Keep,
    Prune,
    Split,
    Clone,
}

/// Children of a split: means at `mu ± 0.5·sqrt(λmax)·v_max`, scales divided
/// by [`SPLIT_SCALE_DIVISOR`].
pub fn split_gaussian(g: &Gaussian3D) -> [Gaussian3D; 2] {
    let scales = g.scales();
    let k = (0..3).max_by(|&a, &b| scales[a].total_cmp(&scales[b])).unwrap();
    let axis: Vector3<f64> = g.rotation_matrix().column(k).into();
    let offset = axis * (0.5 * scales[k]);
    let shrink = SPLIT_SCALE_DIVISOR.ln();
    let child = |sign: f64| Gaussian3D {
        mean: [0, 1, 2].map(|a| g.mean[a] + sign * offset[a]),
        log_scale: g.log_scale.map(|v| v - shrink),
        ..*g
    };
    [child(1.0), child(-1.0)]
}

/// Copy of `g` with its mean moved `jitter` along a random direction.
pub fn clone_gaussian<R: Rng>(g: &Gaussian3D, jitter: f64, rng: &mut R) -> Gaussian3D {
    let d: [f64; 3] = UnitSphere.sample(rng);
    Gaussian3D {
        mean: [0, 1, 2].map(|a| g.mean[a] + jitter * d[a]),
        ..*g
    }
}

/// Restructure the cloud in place. Returns the counts and, for each new
/// slot, the old slot whose optimizer state it inherits.
pub fn refine<R: Rng>(
    cloud: &mut GaussianCloud,
    params: &RefineParams,
    rng: &mut R,
) -> Result<(RefineCounts, Vec<Option<usize>>)> {
    let grad = cloud.grad_accum_norm();
    let keep_box = cloud.bounds().expanded(BOUNDS_MARGIN);
    let mut actions: Vec<Action> = cloud
        .iter()
        .zip(&grad)
        .map(|(g, &gn)| {
            let max_scale = g.scales().iter().copied().fold(0.0, f64::max);
            if g.opacity() < params.tau_alpha || max_scale > params.max_scale || !keep_box.contains(&g.mean) {
                Action::Prune
            } else if gn > params.tau_p {
                if g.covariance().norm() > params.tau_s {
                    Action::Split
                } else {
                    Action::Clone
                }
            } else {
                Action::Keep
            }
        })
        .collect();

    if let Some(cap) = params.max_gaussians {
        let survivors = actions.iter().filter(|a| **a != Action::Prune).count();
        let mut room = cap.saturating_sub(survivors);
        let mut grow: Vec<usize> = (0..actions.len())
            .filter(|&i| matches!(actions[i], Action::Split | Action::Clone))
            .collect();
        grow.sort_by(|&a, &b| grad[b].total_cmp(&grad[a]).then(a.cmp(&b)));
        for i in grow {
            if room > 0 {
                room -= 1;
            } else {
                actions[i] = Action::Keep;
            }
        }
    }

    let mut counts = RefineCounts::default();
    let mut next = GaussianCloud::new(cloud.bounds());
    let mut source = Vec::with_capacity(cloud.len());
    let jitter = CLONE_JITTER * params.grid_spacing;
    for (i, g) in cloud.iter().enumerate() {
        match actions[i] {
            Action::Prune => counts.pruned += 1,
            Action::Keep => {
                next.push(g);
                source.push(Some(i));
            }
            Action::Split => {
                counts.split += 1;
                for c in split_gaussian(&g) {
                    next.push(c);
                    source.push(None);
                }
            }
            Action::Clone => {
                counts.cloned += 1;
                next.push(g);
                source.push(Some(i));
                next.push(clone_gaussian(&g, jitter, rng));
                source.push(None);
            }
        }
    }
    if next.is_empty() {
        return Err(Error::Training(format!(
            "refinement pruned all {} Gaussians (tau_alpha = {})",
            cloud.len(),
            params.tau_alpha
        )));
    }
    next.enforce_invariants();
    next.snap_to_storage();
    next.reset_grad_accum();
    counts.total = next.len();
    *cloud = next;
    Ok((counts, source))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{Bounds, GaussianGrad};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> RefineParams {
        RefineParams {
            tau_alpha: 0.005,
            tau_p: 2e-4,
            tau_s: 0.16,
            max_scale: 8.0,
            grid_spacing: 2.0,
            max_gaussians: None,
        }
    }

    fn with_grad(g: Gaussian3D, norm: f64) -> GaussianCloud {
        let mut c = GaussianCloud::from_gaussians(Bounds::from_dims([16, 16, 16]), [g]);
        let grad = GaussianGrad {
            mean: [norm, 0.0, 0.0],
            ..Default::default()
        };
        c.accumulate_grad_norms(&[(0, grad)]);
        c
    }

    #[test]
    fn all_transparent_aborts() {
        let mut c = with_grad(Gaussian3D::isotropic([8.0; 3], 1.0, 0.001, 0.5), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(refine(&mut c, &params(), &mut rng), Err(Error::Training(_))));
    }

    #[test]
    fn small_high_gradient_gaussian_is_cloned() {
        let mut c = with_grad(Gaussian3D::isotropic([8.0; 3], 0.1, 0.5, 0.5), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (counts, src) = refine(&mut c, &params(), &mut rng).unwrap();
        assert_eq!((counts.pruned, counts.split, counts.cloned, counts.total), (0, 0, 1, 2));
        assert_eq!(src, vec![Some(0), None]);
        let d: f64 = (0..3).map(|a| (c.means()[1][a] - 8.0).powi(2)).sum::<f64>().sqrt();
        assert!((d - 0.1).abs() < 1e-6, "jitter {d}");
    }

    #[test]
    fn large_high_gradient_gaussian_is_split() {
        let g = Gaussian3D {
            mean: [8.0; 3],
            log_scale: [2.0f64.ln(), 0.5f64.ln(), 0.5f64.ln()],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_raw: 0.0,
            intensity_raw: 0.0,
        };
        let mut c = with_grad(g, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (counts, _) = refine(&mut c, &params(), &mut rng).unwrap();
        assert_eq!((counts.split, counts.total), (1, 2));
        let xs: Vec<f64> = c.means().iter().map(|m| m[0]).collect();
        assert!((xs[0] - 9.0).abs() < 1e-6 && (xs[1] - 7.0).abs() < 1e-6);
        assert!((c.get(0).scales()[0] - 2.0 / 1.6).abs() < 1e-6);
    }
}
