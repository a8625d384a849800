//! Adam with coupled L2 weight decay.

use crate::error::{Error, Result};
use crate::tensor::ParamStore;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && self.epsilon > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && self.beta1 > 0.0
            && (0.0..1.0).contains(&self.beta2)
            && self.beta2 > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid Adam configuration {self:?}")))
        }
    }
}

/// One bias-corrected Adam update on every parameter, then zeroes the
/// gradients. The weight-decay term `wd·θ` is added to the gradient before
/// the moment updates.
pub fn adam_step(store: &mut ParamStore, cfg: &AdamConfig) {
    for p in store.iter_mut() {
        p.step += 1;
        let t = p.step as i32;
        let bias1 = 1.0 - cfg.beta1.powi(t);
        let bias2 = 1.0 - cfg.beta2.powi(t);
        let values = p.value.data_mut();
        let grads = p.grad.data_mut();
        let m = p.m.data_mut();
        let v = p.v.data_mut();
        for i in 0..values.len() {
            let g = grads[i] + cfg.weight_decay * values[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            values[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            grads[i] = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn zero_grad_zero_decay_is_noop() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::random(&[3, 3], 1.0, 1));
        let before = store.values();
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        for _ in 0..5 {
            adam_step(&mut store, &cfg);
        }
        assert_eq!(store.values(), before);
    }

    #[test]
    fn zero_learning_rate_is_noop() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::random(&[4], 1.0, 2));
        store.get_mut(id).grad = Tensor::random(&[4], 1.0, 3);
        let before = store.values();
        adam_step(
            &mut store,
            &AdamConfig {
                learning_rate: 0.0,
                ..AdamConfig::default()
            },
        );
        assert_eq!(store.values(), before);
        assert!(store.get(id).grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε) ≈ lr·sign(g).
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::zeros(&[5]));
        store.get_mut(id).grad = Tensor::from_vec(vec![5], vec![0.3, -2.0, 1e-2, 7.0, -0.05]);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        adam_step(&mut store, &cfg);
        for &x in store.value(id).data() {
            assert!((x.abs() - 1e-3).abs() < 1e-5, "{x}");
        }
    }

    #[test]
    fn minimizes_scalar_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("theta", Tensor::scalar(0.0));
        let cfg = AdamConfig {
            learning_rate: 0.1,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        for _ in 0..500 {
            let theta = store.value(id).item();
            store.get_mut(id).grad = Tensor::scalar(2.0 * (theta - 3.0));
            adam_step(&mut store, &cfg);
        }
        assert!((store.value(id).item() - 3.0).abs() < 1e-2);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(AdamConfig::default().validate().is_ok());
        let bad = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
