//! AdamW with decoupled weight decay and the cosine learning-rate schedule.

use respnet_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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

/// First and second moments for each trainable parameter, in canonical
/// order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ParamStore) -> Self {
        let sizes: Vec<usize> = params.trainable_positions().iter().map(|&i| params.tensor_at(i).len()).collect();
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }
}

/// One AdamW update of every trainable parameter. `grads` holds one tensor
/// per trainable parameter in canonical order; frozen tensors are never
/// touched.
pub fn adamw_step(
    params: &mut ParamStore,
    grads: &[Tensor],
    state: &mut OptimizerState,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    let positions = params.trainable_positions();
    if grads.len() != positions.len() || state.m.len() != positions.len() {
        return Err(CoreError::Contract(format!(
            "{} gradients and {} moment slots for {} trainable parameters",
            grads.len(),
            state.m.len(),
            positions.len()
        )));
    }
    for (k, &i) in positions.iter().enumerate() {
        let t = params.tensor_at(i);
        if grads[k].shape() != t.shape() || state.m[k].len() != t.len() {
            return Err(CoreError::Contract(format!(
                "gradient shape {:?} does not match parameter shape {:?}",
                grads[k].shape(),
                t.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    let decay = 1.0 - lr * cfg.weight_decay;
    for (k, &i) in positions.iter().enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        let mut theta = params.tensor_at(i).data().to_vec();
        for (j, (&g, th)) in grads[k].data().iter().zip(theta.iter_mut()).enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *th = *th * decay - lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        params.tensor_at_mut(i).set_data(theta)?;
    }
    Ok(())
}

/// `½·lr0·(1 + cos(π·epoch/max_epochs))`, decaying to zero.
pub fn cosine_lr(epoch: usize, lr0: f64, max_epochs: usize) -> f64 {
    let frac = epoch.min(max_epochs) as f64 / max_epochs as f64;
    0.5 * lr0 * (1.0 + (std::f64::consts::PI * frac).cos())
}
