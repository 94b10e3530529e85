use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use super::tensor::Tensor;

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &ParamStore) -> Self {
        let zeros = || store.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn update(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            let g = grads.tensors()[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (k, w) in p.value.data_mut().iter_mut().enumerate() {
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                *w -= lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * *w);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(&[3], vec![0.3, -1.2, 5.0]).unwrap());
        let before = store.clone();
        let mut grads = store.zero_grads();
        grads.get_mut(id).fill(0.7);
        let mut opt = AdamW::new(AdamWConfig::default(), &store);
        opt.update(&mut store, &grads, 0.0);
        assert_eq!(store, before);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap());
        let mut grads = store.zero_grads();
        grads.get_mut(id).data_mut().copy_from_slice(&[2.0, -3.0]);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &store);
        opt.update(&mut store, &grads, 0.1);
        let w = store.value(id).data();
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] - 1.1).abs() < 1e-6);
    }
}
