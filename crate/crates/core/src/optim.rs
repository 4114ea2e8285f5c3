//! Adam with one learning rate per Gaussian parameter group.

use serde::{Deserialize, Serialize};

use crate::gaussian::{Gaussian3D, GaussianCloud, PARAMS_PER_GAUSSIAN};
use crate::raster::CloudGradients;
use crate::Scalar;

/// Per-group learning rates. The mean rate is multiplied by the scene
/// extent before use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub means: f64,
    pub log_scales: f64,
    pub rotations: f64,
    pub opacity: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self { means: 1.6e-4, log_scales: 5e-3, rotations: 1e-3, opacity: 5e-2, color: 2.5e-3 }
    }
}

impl LearningRates {
    /// Learning rate of each flattened parameter slot.
    fn per_slot(&self, extent: f64) -> [f64; PARAMS_PER_GAUSSIAN] {
        let mut lr = [0.0; PARAMS_PER_GAUSSIAN];
        lr[0..3].fill(self.means * extent);
        lr[3..7].fill(self.rotations);
        lr[7..10].fill(self.log_scales);
        lr[10] = self.opacity;
        lr[11..14].fill(self.color);
        lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-15 }
    }
}

/// First and second moment estimates, laid out like the cloud.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    hyper: AdamHyper,
    lr: [T; PARAMS_PER_GAUSSIAN],
    step: i32,
    first: Vec<[T; PARAMS_PER_GAUSSIAN]>,
    second: Vec<[T; PARAMS_PER_GAUSSIAN]>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(n: usize, rates: &LearningRates, extent: f64, hyper: AdamHyper) -> Self {
        Self {
            hyper,
            lr: rates.per_slot(extent).map(T::of),
            step: 0,
            first: vec![[T::zero(); PARAMS_PER_GAUSSIAN]; n],
            second: vec![[T::zero(); PARAMS_PER_GAUSSIAN]; n],
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// One bias-corrected Adam update of every parameter.
    pub fn step(&mut self, cloud: &mut GaussianCloud<T>, grads: &CloudGradients<T>) {
        assert_eq!(cloud.len(), self.first.len(), "optimizer state out of sync with cloud");
        assert_eq!(grads.gaussians.len(), self.first.len(), "gradient count mismatch");
        self.step += 1;
        let b1 = T::of(self.hyper.beta1);
        let b2 = T::of(self.hyper.beta2);
        let eps = T::of(self.hyper.epsilon);
        let one = T::one();
        let bc1 = one - b1.powi(self.step);
        let bc2 = one - b2.powi(self.step);
        for (((g, grad), m), v) in cloud
            .gaussians
            .iter_mut()
            .zip(&grads.gaussians)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            let mut p = g.to_params();
            let d = grad.to_params();
            for k in 0..PARAMS_PER_GAUSSIAN {
                m[k] = b1 * m[k] + (one - b1) * d[k];
                v[k] = b2 * v[k] + (one - b2) * d[k] * d[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= self.lr[k] * m_hat / (v_hat.sqrt() + eps);
            }
            *g = Gaussian3D::from_params(&p);
        }
    }

    /// Drops the Gaussians (and their moments) for which `keep` is false.
    pub fn retain(&mut self, cloud: &mut GaussianCloud<T>, keep: &[bool]) {
        assert_eq!(keep.len(), cloud.len());
        let mut it = keep.iter();
        cloud.gaussians.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.first.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.second.retain(|_| *it.next().unwrap());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(x: f64) -> GaussianCloud<f64> {
        GaussianCloud::new(vec![Gaussian3D::isotropic([x, 0.0, 0.0], 0.1, 0.5, [0.5; 3])], [0.0; 3])
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction the first step is lr * sign(g).
        let mut cloud = single(1.0);
        let mut adam = Adam::new(1, &LearningRates::default(), 2.0, AdamHyper::default());
        let mut g = CloudGradients::zeros(1);
        g.gaussians[0].mean[0] = 3.7;
        g.gaussians[0].color[2] = -0.01;
        adam.step(&mut cloud, &g);
        assert!((cloud.gaussians[0].mean[0] - (1.0 - 3.2e-4)).abs() < 1e-12);
        assert!((cloud.gaussians[0].color[2] - (0.5 + 2.5e-3)).abs() < 1e-12);
        assert_eq!(cloud.gaussians[0].mean[1], 0.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut cloud = single(1.0);
        let rates = LearningRates { means: 0.05, ..Default::default() };
        let mut adam = Adam::new(1, &rates, 1.0, AdamHyper::default());
        for _ in 0..2000 {
            let mut g = CloudGradients::zeros(1);
            g.gaussians[0].mean[0] = 2.0 * (cloud.gaussians[0].mean[0] - 0.25);
            adam.step(&mut cloud, &g);
        }
        assert!((cloud.gaussians[0].mean[0] - 0.25).abs() < 1e-3);
    }

    #[test]
    fn retain_keeps_state_aligned() {
        let mut cloud = GaussianCloud::new(
            (0..4).map(|i| Gaussian3D::isotropic([i as f64, 0.0, 0.0], 0.1, 0.5, [0.5; 3])).collect(),
            [0.0; 3],
        );
        let mut adam = Adam::new(4, &LearningRates::default(), 1.0, AdamHyper::default());
        adam.retain(&mut cloud, &[true, false, true, false]);
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.gaussians[1].mean[0], 2.0);
        adam.step(&mut cloud, &CloudGradients::zeros(2));
    }
}
