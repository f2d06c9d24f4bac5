use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    /// Parameters excluded from updates.
    pub frozen: Vec<bool>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros: Vec<Tensor<T>> = store.iter().map(|(_, t)| Tensor::zeros(t.c, t.h, t.w)).collect();
        Self { config, step: 0, m: zeros.clone(), v: zeros, frozen: vec![false; store.len()] }
    }

    pub fn update(&mut self, store: &mut ParamStore<T>, grads: &[Tensor<T>]) {
        assert_eq!(grads.len(), store.len(), "one gradient per parameter");
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let lr = T::lit(c.learning_rate);
        let eps = T::lit(c.eps);
        let bc1 = T::one() - b1.powi(self.step as i32);
        let bc2 = T::one() - b2.powi(self.step as i32);
        for ((id, g), (m, v)) in store.ids().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            if self.frozen[id.index()] {
                continue;
            }
            let p = store.value_mut(id);
            for i in 0..p.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (T::one() - b1) * gi;
                v.data[i] = b2 * v.data[i] + (T::one() - b2) * gi * gi;
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                p.data[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::from_vec(2, 1, 1, vec![3.0f64, -2.0]));
        let mut opt = Adam::new(AdamConfig { learning_rate: 0.05, ..Default::default() }, &store);
        for _ in 0..2000 {
            let g = store.value(id).map(|v| 2.0 * (v - 0.5));
            opt.update(&mut store, &[g]);
        }
        assert!(store.value(id).data.iter().all(|v| (v - 0.5).abs() < 1e-3));
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::from_vec(3, 1, 1, vec![0.1f64, 0.2, -0.3]));
        let before = store.clone();
        let mut opt = Adam::new(AdamConfig { learning_rate: 0.0, ..Default::default() }, &store);
        opt.update(&mut store, &[Tensor::from_vec(3, 1, 1, vec![1.0, 0.0, -5.0])]);
        assert_eq!(store, before);
        let _ = id;
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::scalar(1.0f64));
        let mut opt = Adam::new(AdamConfig { learning_rate: 0.01, ..Default::default() }, &store);
        opt.update(&mut store, &[Tensor::scalar(4.0)]);
        assert!((store.value(id).data[0] - 0.99).abs() < 1e-8);
    }
}
