//! Adam with optional decoupled weight decay (AdamW).

use crate::autodiff::GradientVector;
use crate::error::{Error, Result};
use crate::real::{lit, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled decay coefficient; zero gives plain Adam.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn adam(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        AdamConfig {
            weight_decay,
            ..Self::adam(lr)
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl<T: Real> AdamState<T> {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        AdamState {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step_count: 0,
            config,
        }
    }

    /// One bias-corrected update. With `weight_decay > 0` the parameters are
    /// first shrunk by `lr * weight_decay`, independently of the moments.
    pub fn step(&mut self, params: &mut [T], grad: &GradientVector<T>) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} moments, got {} parameters and {} gradient entries",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        let iteration = self.step_count as usize + 1;
        if !grad.is_finite() {
            return Err(Error::NonFinite {
                stage: 0,
                iteration,
                what: "gradient",
            });
        }
        self.step_count += 1;
        let c = &self.config;
        let (b1, b2) = (lit::<T>(c.beta1), lit::<T>(c.beta2));
        let (lr, eps) = (lit::<T>(c.lr), lit::<T>(c.epsilon));
        let one = T::one();
        let t = self.step_count as i32;
        let bias1 = one - b1.powi(t);
        let bias2 = one - b2.powi(t);
        let decay = lit::<T>(c.lr * c.weight_decay);
        for i in 0..params.len() {
            let g = grad.entries[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            if c.weight_decay > 0.0 {
                params[i] -= decay * params[i];
            }
            let m_hat = self.m[i] / bias1;
            let v_hat = self.v[i] / bias2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
