//! Global-norm gradient clipping and Adam.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{LstmParams, TrainConfig};

/// L2 norm over every parameter tensor.
pub fn global_norm(grads: &LstmParams) -> f64 {
    grads
        .tensors()
        .iter()
        .flat_map(|t| t.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Scale all gradients so their global norm does not exceed `threshold`.
pub fn clip_global_norm(grads: &mut LstmParams, threshold: f64) -> Result<f64> {
    if !(threshold > 0.0) {
        return Err(Error::Argument("clip threshold must be > 0".into()));
    }
    let norm = global_norm(grads);
    if norm > threshold {
        let scale = threshold / norm;
        for t in grads.tensors_mut() {
            for v in t {
                *v *= scale;
            }
        }
    }
    Ok(norm)
}

/// First/second moment estimates, aligned with `LstmParams::tensors`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &LstmParams) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        AdamState {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }
}

/// One Adam step with bias correction.
pub fn adam_update(
    params: &mut LstmParams,
    grads: &LstmParams,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - config.beta1.powf(t);
    let bc2 = 1.0 - config.beta2.powf(t);

    let grad_tensors = grads.tensors();
    let mut param_tensors = params.tensors_mut();
    if grad_tensors.len() != param_tensors.len() || grad_tensors.len() != state.m.len() {
        return Err(Error::Consistency("adam state/grads/params misaligned".into()));
    }
    for (idx, p) in param_tensors.iter_mut().enumerate() {
        let g = grad_tensors[idx];
        if g.len() != p.len() {
            return Err(Error::Consistency("tensor size mismatch in adam_update".into()));
        }
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        for k in 0..g.len() {
            m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
            v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.eps_adam);
            if !p[k].is_finite() {
                return Err(Error::Overflow("non-finite parameter after adam step".into()));
            }
        }
    }
    Ok(())
}
