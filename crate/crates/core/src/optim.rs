use serde::{Deserialize, Serialize};

use crate::params::ParamSet;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

/// Adam state for one [`ParamSet`] layout.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: ParamSet<T>,
    v: ParamSet<T>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, like: &ParamSet<T>) -> Self {
        Adam {
            config,
            m: like.zeros_like(),
            v: like.zeros_like(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Descent step: `params -= lr * m̂ / (sqrt(v̂) + eps)`.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>) {
        self.step += 1;
        let c = self.config;
        let b1 = T::of(c.beta1);
        let b2 = T::of(c.beta2);
        let one = T::one();
        let bc1 = one - T::of(c.beta1.powi(self.step as i32));
        let bc2 = one - T::of(c.beta2.powi(self.step as i32));
        let lr = T::of(c.lr);
        let eps = T::of(c.eps);
        let tensors = params.tensors_mut();
        for (i, p) in tensors.iter_mut().enumerate() {
            let g = &grads.tensors()[i].data;
            let m = &mut self.m.tensors_mut()[i].data;
            let v = &mut self.v.tensors_mut()[i].data;
            for k in 0..p.data.len() {
                let gk = g[k];
                m[k] = b1 * m[k] + (one - b1) * gk;
                v[k] = b2 * v[k] + (one - b2) * gk * gk;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                p.data[k] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}
