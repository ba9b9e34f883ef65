//! Sigmoid output and binary cross-entropy computed directly from logits.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Logistic function, evaluated without overflow for any finite `z`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `−[y·ln σ(z) + (1−y)·ln(1−σ(z))]` in the fused form
/// `max(z, 0) − z·y + ln(1 + e^{−|z|})`.
pub fn bce_with_logits(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// d(loss)/dz = σ(z) − y.
pub fn bce_with_logits_grad(z: f64, y: f64) -> f64 {
    sigmoid(z) - y
}

/// Batch-mean BCE-with-logits over `(N, 1)` logits and `(N, 1)` targets.
pub fn bce_with_logits_mean(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let softplus_neg_abs = logits.abs()?.neg()?.exp()?.affine(1.0, 1.0)?.log()?;
    let loss = ((logits.relu()? - (logits * targets)?)? + softplus_neg_abs)?;
    Ok(loss.mean_all()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub logit: f64,
    pub probability: f64,
}

impl ModelOutput {
    pub fn from_logit(logit: f64) -> Self {
        ModelOutput {
            logit,
            probability: sigmoid(logit),
        }
    }
}
