//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
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
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Apply one update to every parameter from its accumulated gradient, then
/// zero the gradients. Rejects non-finite gradients, naming the parameter.
pub fn adam_step<T: Scalar>(store: &mut ParameterStore<T>, cfg: &AdamConfig) -> Result<()> {
    let t = store.adam_step_count() + 1;
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
    let (ob1, ob2) = (T::from_f64(1.0 - cfg.beta1), T::from_f64(1.0 - cfg.beta2));
    let (ibc1, ibc2) = (T::from_f64(1.0 / bc1), T::from_f64(1.0 / bc2));
    let (lr, eps) = (T::from_f64(cfg.lr), T::from_f64(cfg.eps));

    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let (value, grad, m, v, name) = store.optimizer_slices(id);
        for i in 0..value.len() {
            let g = grad[i];
            if !g.is_finite() {
                return Err(Error::NonFinite { context: format!("gradient of parameter '{name}'") });
            }
            m[i] = b1 * m[i] + ob1 * g;
            v[i] = b2 * v[i] + ob2 * g * g;
            let m_hat = m[i] * ibc1;
            let v_hat = v[i] * ibc2;
            value[i] = value[i] - lr * m_hat / (v_hat.sqrt() + eps);
            grad[i] = T::zero();
        }
    }
    store.set_adam_step_count(t);
    Ok(())
}
