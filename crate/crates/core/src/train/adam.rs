use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Param;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Param<T>]) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape().to_vec()).expect("parameter shapes are valid"))
                .collect()
        };
        Self { m: zeros(), v: zeros(), t: 0 }
    }
}

/// One bias-corrected Adam update of every parameter from its gradient buffer.
pub fn adam_step<T: Scalar>(params: &mut [Param<T>], state: &mut AdamState<T>, config: &AdamConfig, lr: f64) -> Result<()> {
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::shape("optimizer state does not match the parameter list"));
    }
    for ((p, m), v) in params.iter().zip(&state.m).zip(&state.v) {
        if p.value.shape() != m.shape() || p.grad.shape() != v.shape() {
            return Err(Error::shape(format!("optimizer state for {} has the wrong shape", p.name)));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        update(p.value.data_mut(), p.grad.data(), m.data_mut(), v.data_mut(), config, lr, bc1, bc2);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn update<T: Scalar>(theta: &mut [T], grad: &[T], m: &mut [T], v: &mut [T], c: &AdamConfig, lr: f64, bc1: f64, bc2: f64) {
    let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
    let (one_b1, one_b2) = (T::from_f64_lossy(1.0 - c.beta1), T::from_f64_lossy(1.0 - c.beta2));
    let (inv_bc1, inv_bc2) = (T::from_f64_lossy(1.0 / bc1), T::from_f64_lossy(1.0 / bc2));
    let (lr, eps) = (T::from_f64_lossy(lr), T::from_f64_lossy(c.epsilon));
    for (((th, &g), mi), vi) in theta.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        *mi = b1 * *mi + one_b1 * g;
        *vi = b2 * *vi + one_b2 * g * g;
        let m_hat = *mi * inv_bc1;
        let v_hat = *vi * inv_bc2;
        *th = *th - lr * m_hat / (v_hat.sqrt() + eps);
    }
}
