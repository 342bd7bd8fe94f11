//! Adam parameter updates with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Optimizer hyperparameters. Defaults are the canonical Adam settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter first/second moment estimates plus the shared step counter.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    /// Zero moments mirroring the given parameter shapes.
    pub fn new(params: &[&Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam step over a parameter list; gradients are read from each
/// tensor's populated `grad` buffer.
pub fn adam_step(
    params: &mut [&mut Tensor],
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(Error::Usage(format!(
            "adam state tracks {} parameters, got {}",
            state.m.len(),
            params.len()
        )));
    }
    if hyper.learning_rate <= 0.0 {
        return Err(Error::Usage("adam learning rate must be positive".into()));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for (idx, p) in params.iter_mut().enumerate() {
        let g = p.grad().ok_or_else(|| {
            Error::Usage(format!("parameter {idx} has no gradient; run backward first"))
        })?;
        if g.len() != p.numel() {
            return Err(Error::Shape(format!(
                "parameter {idx}: grad length {} != {}",
                g.len(),
                p.numel()
            )));
        }
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        // The update reads grads while mutating data, so stage the math first.
        let mut steps = vec![0.0; g.len()];
        for i in 0..g.len() {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            steps[i] = hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
        }
        for (pv, s) in p.data_mut().iter_mut().zip(&steps) {
            *pv -= s;
        }
    }
    Ok(())
}
