use serde::{Deserialize, Serialize};

use super::model::Network;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators mirroring every parameter tensor of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(params: &Network, hyper: AdamHyper) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect::<Vec<_>>()
        };
        AdamState {
            step: 0,
            first: zeros(),
            second: zeros(),
            hyper,
        }
    }
}

/// Bias-corrected Adam update of `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut Network, grads: &Network) -> Result<()> {
    let grad_tensors = grads.tensors();
    let param_tensors = params.tensors_mut();
    if param_tensors.len() != state.first.len() || grad_tensors.len() != state.first.len() {
        return Err(Error::Shape(
            "optimizer state does not mirror the parameters".into(),
        ));
    }
    for ((p, g), m) in param_tensors.iter().zip(&grad_tensors).zip(&state.first) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::Shape(format!(
                "parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }

    state.step += 1;
    let AdamHyper {
        lr,
        beta1,
        beta2,
        eps,
    } = state.hyper;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    for (((p, g), m), v) in param_tensors
        .into_iter()
        .zip(grad_tensors)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
