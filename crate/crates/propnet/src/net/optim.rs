//! Adam optimizer with bias correction, operating over the model's
//! parameter tensors in their canonical order.

use serde::{Deserialize, Serialize};

use super::model::{ModelGradients, ModelWeights};
use super::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(weights: &ModelWeights<T>) -> Self {
        let shapes: Vec<usize> = weights.param_tensors().iter().map(|t| t.len()).collect();
        Self {
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update:
/// m = b1 m + (1-b1) g; v = b2 v + (1-b2) g^2;
/// p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
pub fn adam_step<T: Scalar>(
    weights: &mut ModelWeights<T>,
    grads: &ModelGradients<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) {
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one = T::one();
    let lr = T::from_f64(cfg.lr);
    let eps = T::from_f64(cfg.epsilon);
    let bc1 = T::from_f64(1.0 - cfg.beta1.powi(t));
    let bc2 = T::from_f64(1.0 - cfg.beta2.powi(t));
    let mut params = weights.param_tensors_mut();
    let grad_tensors = grads.param_tensors();
    assert_eq!(params.len(), grad_tensors.len(), "optimizer shape mismatch");
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grad_tensors)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        assert_eq!(p.len(), g.len(), "optimizer tensor length mismatch");
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
