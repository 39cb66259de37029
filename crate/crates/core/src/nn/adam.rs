use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, one vector per parameter tensor.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// One bias-corrected Adam update. Gradients are validated before any
/// parameter is touched, so a failed step leaves `params` and `state` intact.
pub fn adam_step(
    params: Vec<&mut [f64]>,
    grads: Vec<&[f64]>,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), NnError> {
    if params.len() != grads.len() {
        return Err(NnError::Shape(format!(
            "{} parameter tensors but {} gradient tensors",
            params.len(),
            grads.len()
        )));
    }
    for (ti, (p, g)) in params.iter().zip(&grads).enumerate() {
        if p.len() != g.len() {
            return Err(NnError::Shape(format!("tensor {ti}: {} params vs {} grads", p.len(), g.len())));
        }
        if let Some(index) = g.iter().position(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteGradient { tensor: ti, index });
        }
    }
    if state.m.is_empty() {
        state.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        state.v = state.m.clone();
    } else if state.m.len() != grads.len() || state.m.iter().zip(&grads).any(|(m, g)| m.len() != g.len()) {
        return Err(NnError::Shape("optimizer state does not match parameters".into()));
    }

    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for (((p, g), m), v) in params.into_iter().zip(&grads).zip(&mut state.m).zip(&mut state.v) {
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
