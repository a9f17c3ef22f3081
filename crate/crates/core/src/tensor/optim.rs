use serde::{Deserialize, Serialize};

use super::ParamStore;

/// Gradient-based update over the trainable parameters of a store. `step`
/// applies the accumulated gradients and then clears them.
pub trait Optimizer {
    fn step(&mut self, store: &mut ParamStore);
}

#[derive(Debug, Clone, Copy)]
pub struct Sgd {
    pub lr: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, store: &mut ParamStore) {
        for p in store.iter_mut() {
            if p.requires_grad {
                for (v, g) in p.value.data_mut().iter_mut().zip(&p.grad) {
                    *v -= self.lr * g;
                }
            }
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: default_beta1(), beta2: default_beta2(), eps: default_eps() }
    }
}

/// Bias-corrected Adam. Moments are kept per parameter in registration
/// order and sized lazily on the first step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, m: Vec::new(), v: Vec::new(), t: 0 }
    }

    pub fn with_lr(lr: f64) -> Self {
        Self::new(AdamConfig { lr, ..AdamConfig::default() })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }
}

impl Optimizer for Adam {
    fn step(&mut self, store: &mut ParamStore) {
        if self.m.len() != store.len() {
            self.m = store.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if p.requires_grad {
                for (((x, g), mi), vi) in p.value.data_mut().iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *mi = beta1 * *mi + (1.0 - beta1) * g;
                    *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                    *x -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                }
            }
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store_with_grad(g: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("x", Tensor::vector(vec![1.0, -1.0]));
        s.get_mut(id).grad = vec![g, g];
        s
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut s = store_with_grad(0.5);
        let mut adam = Adam::with_lr(0.1);
        adam.step(&mut s);
        let before = s.flat_values();
        let m1 = adam.moments().0[0][0];
        adam.step(&mut s);
        assert!(adam.moments().0[0][0].abs() < m1.abs());
        // the update uses the decayed first moment, which is still nonzero;
        // with lr = 0 the map is exactly the identity
        adam.config.lr = 0.0;
        let mid = s.flat_values();
        adam.step(&mut s);
        assert_eq!(s.flat_values(), mid);
        assert_ne!(before, mid);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        let mut s = store_with_grad(3.7);
        Adam::with_lr(0.01).step(&mut s);
        let d = 1.0 - s.flat_values()[0];
        assert!((d - 0.01).abs() < 1e-9);
    }

    #[test]
    fn fresh_store_with_zero_grad_unchanged() {
        let mut s = store_with_grad(0.0);
        Adam::with_lr(0.1).step(&mut s);
        assert_eq!(s.flat_values(), vec![1.0, -1.0]);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut s = store_with_grad(2.0);
        Sgd { lr: 0.0 }.step(&mut s);
        assert_eq!(s.flat_values(), vec![1.0, -1.0]);
        let mut s = store_with_grad(2.0);
        Adam::with_lr(0.0).step(&mut s);
        assert_eq!(s.flat_values(), vec![1.0, -1.0]);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut s = store_with_grad(0.3);
            let mut a = Adam::with_lr(0.05);
            for k in 0..10 {
                for p in s.iter_mut() {
                    p.grad = p.value.data().iter().map(|v| v * k as f64).collect();
                }
                a.step(&mut s);
            }
            s.flat_values()
        };
        assert_eq!(run(), run());
    }
}
