//! First-order optimizers over the parameter registry.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{config_err, internal_err, Result};
use crate::net::NetworkParams;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields, default))]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// SGD momentum coefficient.
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-4,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64, momentum: f64) -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum,
            learning_rate,
            momentum,
            ..Self::default()
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(config_err!("momentum {} is outside [0, 1)", self.momentum));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(config_err!("Adam betas ({}, {}) must lie in [0, 1)", self.beta1, self.beta2));
        }
        if !(self.epsilon > 0.0) {
            return Err(config_err!("epsilon must be positive, got {}", self.epsilon));
        }
        Ok(())
    }
}

/// Per-tensor moment buffers: SGD uses `first` as velocity, Adam uses both.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub steps: u64,
    pub first: Vec<Vec<T>>,
    pub second: Vec<Vec<T>>,
}

impl<T> Default for OptimizerState<T> {
    fn default() -> Self {
        Self {
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    config: OptimizerConfig,
    state: OptimizerState<T>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        Self::with_state(config, OptimizerState::default())
    }

    pub fn with_state(config: OptimizerConfig, state: OptimizerState<T>) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, state })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn state(&self) -> &OptimizerState<T> {
        &self.state
    }

    /// Updates every trainable tensor of `params` from its gradient slot,
    /// then zeroes the gradients.
    pub fn step(&mut self, params: &mut NetworkParams<T>) -> Result<()> {
        let mut named: Vec<(String, &mut Tensor<T>)> = params
            .entries_mut()
            .iter_mut()
            .filter(|e| e.role.trainable())
            .map(|e| (e.path.clone(), &mut e.tensor))
            .collect();
        self.step_tensors(&mut named)
    }

    /// Updates a list of named tensors; the list must keep the same order
    /// and sizes across calls.
    pub fn step_tensors(&mut self, tensors: &mut [(String, &mut Tensor<T>)]) -> Result<()> {
        for (path, t) in tensors.iter() {
            if t.grad().is_none() {
                return Err(internal_err!("layer {path}: no gradient to apply"));
            }
        }
        if self.state.first.is_empty() {
            self.state.first = tensors.iter().map(|(_, t)| vec![T::zero(); t.len()]).collect();
            if self.config.kind == OptimizerKind::Adam {
                self.state.second = self.state.first.clone();
            }
        }
        if self.state.first.len() != tensors.len()
            || tensors.iter().zip(&self.state.first).any(|((_, t), m)| t.len() != m.len())
            || (self.config.kind == OptimizerKind::Adam && self.state.second.len() != tensors.len())
        {
            return Err(internal_err!("optimizer state does not match the parameter list"));
        }
        self.state.steps += 1;
        let lr = T::from_f64(self.config.learning_rate);
        match self.config.kind {
            OptimizerKind::SgdMomentum => {
                let mu = T::from_f64(self.config.momentum);
                for ((_, t), vel) in tensors.iter_mut().zip(&mut self.state.first) {
                    let (w, g) = t.data_and_grad_mut();
                    let g = g.expect("checked above");
                    for ((w, g), v) in w.iter_mut().zip(g.iter_mut()).zip(vel.iter_mut()) {
                        *v = mu * *v + *g;
                        *w -= lr * *v;
                        *g = T::zero();
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (self.config.beta1, self.config.beta2);
                let t_step = self.state.steps.min(i32::MAX as u64) as i32;
                let c1 = T::from_f64(1.0 - Float::powi(b1, t_step));
                let c2 = T::from_f64(1.0 - Float::powi(b2, t_step));
                let (b1, b2) = (T::from_f64(b1), T::from_f64(b2));
                let eps = T::from_f64(self.config.epsilon);
                let one = T::one();
                for (((_, t), m), v) in tensors.iter_mut().zip(&mut self.state.first).zip(&mut self.state.second) {
                    let (w, g) = t.data_and_grad_mut();
                    let g = g.expect("checked above");
                    for (((w, g), m), v) in w.iter_mut().zip(g.iter_mut()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = b1 * *m + (one - b1) * *g;
                        *v = b2 * *v + (one - b2) * *g * *g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *w -= lr * m_hat / (v_hat.sqrt() + eps);
                        *g = T::zero();
                    }
                }
            }
        }
        Ok(())
    }
}
