use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam. State is keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: BTreeMap<String, Vec<f64>>,
    pub second_moment: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }

    /// Apply one update to every trainable parameter that holds a gradient.
    pub fn step(&mut self, params: &mut ParamStore) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (name, t) in params.iter_mut() {
            if !t.requires_grad {
                continue;
            }
            let Some(grad) = t.grad.take() else { continue };
            let n = grad.len();
            let m = self.first_moment.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.second_moment.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            for (k, p) in t.data_mut().iter_mut().enumerate() {
                let g = grad[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            t.grad = Some(grad);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store_with(p: f64, g: f64) -> ParamStore {
        let mut s = ParamStore::default();
        let mut t = Tensor::scalar(p).with_grad();
        t.grad = Some(vec![g]);
        s.insert("p", t);
        s
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut s = store_with(1.0, 0.0);
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            ..Default::default()
        });
        adam.step(&mut s);
        assert_eq!(s.get("p").unwrap().item(), 1.0);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = 1, v̂ = 1 after bias correction, so p = 1 - 0.1 / (1 + 1e-8).
        let mut s = store_with(1.0, 1.0);
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            ..Default::default()
        });
        adam.step(&mut s);
        let p = s.get("p").unwrap().item();
        assert!((p - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((p - 0.9).abs() < 1e-8);
    }

    #[test]
    fn descends_a_quadratic() {
        let mut s = store_with(3.0, 0.0);
        let mut adam = Adam::new(AdamConfig {
            lr: 0.05,
            ..Default::default()
        });
        let loss = |p: f64| (p - 1.0).powi(2);
        let mut prev = loss(3.0);
        for _ in 0..2 {
            let p = s.get("p").unwrap().item();
            s.get_mut("p").unwrap().grad = Some(vec![2.0 * (p - 1.0)]);
            adam.step(&mut s);
            let now = loss(s.get("p").unwrap().item());
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn frozen_params_are_skipped() {
        let mut s = store_with(1.0, 1.0);
        s.get_mut("p").unwrap().requires_grad = false;
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            ..Default::default()
        });
        adam.step(&mut s);
        assert_eq!(s.get("p").unwrap().item(), 1.0);
    }
}
