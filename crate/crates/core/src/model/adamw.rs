use serde::{Deserialize, Serialize};

use super::{Gradients, ModelError, ModelParams, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-2 }
    }
}

/// First and second moment estimates, one buffer per trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<F> {
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Scalar> AdamWState<F> {
    pub fn new(params: &mut ModelParams<F>) -> Self {
        let sizes: Vec<usize> = params.tensors_mut().iter().map(|(_, t)| t.len()).collect();
        AdamWState {
            m: sizes.iter().map(|&n| vec![F::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![F::zero(); n]).collect(),
        }
    }
}

/// One AdamW update at step `t` (1-based):
/// `θ ← θ − lr·( m̂/(√v̂ + ε) + λ·θ )` with bias-corrected moments.
pub fn adamw_step<F: Scalar>(
    params: &mut ModelParams<F>,
    grads: &Gradients<F>,
    state: &mut AdamWState<F>,
    t: usize,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    if t == 0 {
        return Err(ModelError::Config("AdamW step index starts at 1".into()));
    }
    let grad_tensors = grads.tensors();
    for (name, g) in &grad_tensors {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteGradient(name.clone()));
        }
    }
    let mut tensors = params.tensors_mut();
    if tensors.len() != grad_tensors.len() || tensors.len() != state.m.len() {
        return Err(ModelError::Shape("optimizer state does not match parameters".into()));
    }

    let f = F::from_f64_lossy;
    let (b1, b2) = (f(cfg.beta1), f(cfg.beta2));
    let one = F::one();
    let bc1 = one - f(cfg.beta1.powi(t as i32));
    let bc2 = one - f(cfg.beta2.powi(t as i32));
    let (lr, eps, wd) = (f(lr), f(cfg.eps), f(cfg.weight_decay));

    for (((name, theta), (_, g)), (m, v)) in
        tensors.iter_mut().zip(&grad_tensors).zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if theta.len() != g.len() || theta.len() != m.len() {
            return Err(ModelError::Shape(format!("gradient for {name} has the wrong length")));
        }
        for i in 0..theta.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            theta[i] = theta[i] - lr * (m_hat / (v_hat.sqrt() + eps) + wd * theta[i]);
        }
    }
    Ok(())
}
