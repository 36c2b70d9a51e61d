//! Adam over the flattened per-Gaussian parameter vector.

use serde::{Deserialize, Serialize};

use crate::gaussian::{CloudGradients, GaussianCloud, GaussianGrad};

const P: usize = GaussianGrad::LEN;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    /// Multiplied by the largest scene extent.
    pub mean: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub intensity: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            mean: 1.6e-3,
            log_scale: 5e-3,
            rotation: 1e-3,
            opacity: 5e-2,
            intensity: 2.5e-2,
        }
    }
}

impl LearningRates {
    pub fn all_positive(&self) -> bool {
        [self.mean, self.log_scale, self.rotation, self.opacity, self.intensity]
            .iter()
            .all(|&r| r > 0.0 && r.is_finite())
    }

    /// Rates laid out like [`GaussianGrad::to_array`].
    pub fn per_parameter(&self, extent: f64) -> [f64; P] {
        let m = self.mean * extent;
        [
            m,
            m,
            m,
            self.log_scale,
            self.log_scale,
            self.log_scale,
            self.rotation,
            self.rotation,
            self.rotation,
            self.rotation,
            self.opacity,
            self.intensity,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: [f64; P],
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<[f64; P]>,
    v: Vec<[f64; P]>,
}

impl Adam {
    pub fn new(lr: [f64; P], len: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![[0.0; P]; len],
            v: vec![[0.0; P]; len],
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One update of every parameter. Does not enforce cloud invariants.
    pub fn step(&mut self, cloud: &mut GaussianCloud, grads: &CloudGradients) {
        assert_eq!(grads.len(), cloud.len(), "gradient count mismatch");
        assert_eq!(self.m.len(), cloud.len(), "optimizer state out of sync with cloud");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let (ms, vs) = (&mut self.m, &mut self.v);
        cloud.update_each(|i, g| {
            let grad = grads.grads[i].to_array();
            let mut delta = [0.0; P];
            for k in 0..P {
                let m = &mut ms[i][k];
                let v = &mut vs[i][k];
                *m = b1 * *m + (1.0 - b1) * grad[k];
                *v = b2 * *v + (1.0 - b2) * grad[k] * grad[k];
                delta[k] = lr[k] * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            }
            for a in 0..3 {
                g.mean[a] -= delta[a];
                g.log_scale[a] -= delta[3 + a];
            }
            for a in 0..4 {
                g.rotation[a] -= delta[6 + a];
            }
            g.opacity_raw -= delta[10];
            g.intensity_raw -= delta[11];
        });
    }

    /// Rebuild moment buffers after the cloud was restructured. `source[i]`
    /// names the old slot whose moments the new Gaussian `i` inherits;
    /// `None` starts from zero.
    pub fn remap(&mut self, source: &[Option<usize>]) {
        let pick = |buf: &[[f64; P]]| -> Vec<[f64; P]> {
            source.iter().map(|s| s.map_or([0.0; P], |i| buf[i])).collect()
        };
        self.m = pick(&self.m);
        self.v = pick(&self.v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{Bounds, Gaussian3D};

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut cloud = GaussianCloud::from_gaussians(
            Bounds::from_dims([4, 4, 4]),
            [Gaussian3D::isotropic([2.0; 3], 1.0, 0.5, 0.5)],
        );
        let mut adam = Adam::new([0.1; P], 1);
        let mut grads = CloudGradients::zeros(1);
        grads.grads[0].intensity_raw = 3.0;
        grads.grads[0].mean = [-2.0, 0.0, 0.0];
        let before = cloud.get(0);
        adam.step(&mut cloud, &grads);
        let after = cloud.get(0);
        assert!((after.intensity_raw - (before.intensity_raw - 0.1)).abs() < 1e-8);
        assert!((after.mean[0] - (before.mean[0] + 0.1)).abs() < 1e-8);
        assert_eq!(after.mean[1], before.mean[1]);
    }

    #[test]
    fn remap_zeroes_new_slots() {
        let mut adam = Adam::new([0.1; P], 2);
        adam.m[1][0] = 5.0;
        adam.remap(&[Some(1), None, Some(1)]);
        assert_eq!(adam.m[0][0], 5.0);
        assert_eq!(adam.m[1][0], 0.0);
        assert_eq!(adam.m[2][0], 5.0);
    }
}
