//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{GradPair, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Default::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Optimizer state: first/second moment per parameter tensor, aligned with
/// the order parameters are presented to [`Adam::step`]. The sequence must
/// have the same shapes on every call; re-create the optimizer to train a
/// different parameter set.
#[derive(Debug)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    step: u64,
    moments: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, step: 0, moments: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update over `params`, reading each pair's `grad` and writing its
    /// `value`. Gradients are left untouched; callers zero them per step.
    pub fn step(&mut self, params: &mut [&mut GradPair<T>]) -> Result<()> {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| (Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())))
                .collect();
        }
        if self.moments.len() != params.len() {
            return Err(Error::InvalidArg(format!(
                "optimizer state holds {} tensors, step got {}",
                self.moments.len(),
                params.len()
            )));
        }
        self.step += 1;
        let b1 = T::from_f64(self.cfg.beta1);
        let b2 = T::from_f64(self.cfg.beta2);
        let eps = T::from_f64(self.cfg.eps);
        let lr = T::from_f64(self.cfg.lr);
        let bc1 = T::from_f64(1.0 - self.cfg.beta1.powi(self.step as i32));
        let bc2 = T::from_f64(1.0 - self.cfg.beta2.powi(self.step as i32));
        let one = T::one();

        for (pair, (m, v)) in params.iter_mut().zip(self.moments.iter_mut()) {
            if pair.value.shape() != m.shape() {
                return Err(Error::Shape(format!(
                    "parameter shape {:?} does not match optimizer state {:?}",
                    pair.value.shape(),
                    m.shape()
                )));
            }
            let gdata = pair.grad.data();
            for (i, p) in pair.value.data_mut().iter_mut().enumerate() {
                let g = gdata[i];
                let mi = b1 * m.data()[i] + (one - b1) * g;
                let vi = b2 * v.data()[i] + (one - b2) * g * g;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_pair(v: f64) -> GradPair<f64> {
        GradPair::new(Tensor::from_vec(&[1], vec![v]).unwrap())
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = scalar_pair(0.75);
        let mut adam = Adam::new(AdamConfig::with_lr(0.1));
        adam.step(&mut [&mut p]).unwrap();
        assert_eq!(p.value.data()[0], 0.75);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        let mut p = scalar_pair(0.0);
        p.grad.data_mut()[0] = 1.0;
        let mut adam = Adam::new(AdamConfig::with_lr(1e-4));
        adam.step(&mut [&mut p]).unwrap();
        // Bias-corrected first step is lr * g / (|g| + eps) ~ -lr.
        assert!((p.value.data()[0] + 1e-4).abs() < 1e-8, "{}", p.value.data()[0]);
    }

    #[test]
    fn quadratic_descends_monotonically() {
        let mut p = scalar_pair(1.0);
        let mut adam = Adam::new(AdamConfig::with_lr(0.1));
        let mut f_prev = 1.0f64;
        for _ in 0..5 {
            let theta = p.value.data()[0];
            p.grad.data_mut()[0] = 2.0 * theta;
            adam.step(&mut [&mut p]).unwrap();
            p.zero_grad();
            let f = p.value.data()[0].powi(2);
            assert!(f < f_prev, "f did not decrease: {f} >= {f_prev}");
            f_prev = f;
        }
    }

    #[test]
    fn deterministic_given_identical_inputs() {
        let run = || {
            let mut p = scalar_pair(0.3);
            let mut adam = Adam::new(AdamConfig::with_lr(0.01));
            for k in 0..10 {
                p.grad.data_mut()[0] = (k as f64).sin();
                adam.step(&mut [&mut p]).unwrap();
            }
            p.value.data()[0]
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
