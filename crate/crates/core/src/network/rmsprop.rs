//! RMSProp update rule.

use serde::{Deserialize, Serialize};

use super::model::LayerState;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for RmsProp {
    fn default() -> Self {
        RmsProp {
            learning_rate: 1e-4,
            rho: 0.9,
            epsilon: 1e-8,
        }
    }
}

impl RmsProp {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Config(format!(
                "rho must lie in [0, 1), got {}",
                self.rho
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Updates one parameter tensor in place:
    /// `cache = rho*cache + (1-rho)*g^2`, `param -= lr*g / (sqrt(cache) + eps)`.
    pub fn update(&self, param: &mut Tensor, grad: &Tensor, cache: &mut Tensor) -> Result<()> {
        if param.shape() != grad.shape() || param.shape() != cache.shape() {
            return Err(Error::Shape(format!(
                "rmsprop: param {:?}, grad {:?}, cache {:?}",
                param.shape(),
                grad.shape(),
                cache.shape()
            )));
        }
        if !grad.is_finite() {
            return Err(Error::NonFinite("gradient contains NaN or infinity".into()));
        }
        for ((p, &g), c) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(cache.data_mut())
        {
            *c = self.rho * *c + (1.0 - self.rho) * g * g;
            *p -= self.learning_rate * g / (c.sqrt() + self.epsilon);
        }
        if !param.is_finite() {
            return Err(Error::NonFinite("parameter became NaN or infinite".into()));
        }
        Ok(())
    }
}

/// Applies one RMSProp step to a layer's weights and bias.
pub fn rmsprop_step(state: &mut LayerState, lr: f64, rho: f64, eps: f64) -> Result<()> {
    RmsProp {
        learning_rate: lr,
        rho,
        epsilon: eps,
    }
    .step(state)
}

impl RmsProp {
    pub fn step(&self, state: &mut LayerState) -> Result<()> {
        // Check both gradients first so a failure leaves the layer untouched.
        if !state.grad_weights.is_finite() || !state.grad_bias.is_finite() {
            return Err(Error::NonFinite("gradient contains NaN or infinity".into()));
        }
        self.update(
            &mut state.weights,
            &state.grad_weights,
            &mut state.cache_weights,
        )?;
        self.update(&mut state.bias, &state.grad_bias, &mut state.cache_bias)
    }
}
