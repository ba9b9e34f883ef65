//! Stochastic gradient descent with classical (heavy-ball) momentum:
//! `v ← μ·v + g`, `θ ← θ − η·v`. No dampening, no Nesterov.

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use crate::error::{Error, Result};

/// One momentum step on flat parameter/velocity buffers, in place.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    lr: f64,
    momentum: f64,
    velocity: &mut [f64],
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::Shape {
            expected: format!("{} gradients and velocities", params.len()),
            actual: format!("{} gradients, {} velocities", grads.len(), velocity.len()),
        });
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

/// The same update applied to model variables.
pub struct MomentumSgd {
    vars: Vec<Var>,
    velocity: Vec<Option<Tensor>>,
    momentum: f64,
}

impl MomentumSgd {
    pub fn new(vars: Vec<Var>, momentum: f64) -> Self {
        let velocity = vec![None; vars.len()];
        MomentumSgd {
            vars,
            velocity,
            momentum,
        }
    }

    /// Variables without a gradient in `grads` are left untouched.
    pub fn step(&mut self, grads: &GradStore, lr: f64) -> Result<()> {
        for (var, velocity) in self.vars.iter().zip(self.velocity.iter_mut()) {
            let Some(grad) = grads.get(var) else {
                continue;
            };
            let next = match velocity.take() {
                // A zero initial velocity makes the first step v = g.
                None => grad.copy()?,
                Some(v) => ((v * self.momentum)? + grad)?,
            };
            var.set(&(var.as_tensor() - (&next * lr)?)?)?;
            *velocity = Some(next);
        }
        Ok(())
    }
}
