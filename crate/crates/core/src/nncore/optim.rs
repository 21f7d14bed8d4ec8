use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{Error, Result};

/// Optimizer state that persists across steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    pub velocity: Vec<Vec<f64>>,
    pub step_count: u64,
    pub base_lr: f64,
    pub current_lr: f64,
}

/// SGD with Nesterov momentum and time-based decay:
///
/// ```text
/// lr_t = current_lr / (1 + decay * step_count)
/// v    = momentum * v - lr_t * g
/// p    = p + momentum * v - lr_t * g
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct SgdNesterov<F> {
    pub momentum: f64,
    pub decay: f64,
    state: OptState,
    velocity: Vec<Vec<F>>,
}

impl<F: Real> SgdNesterov<F> {
    pub fn new(lr: f64, momentum: f64, decay: f64) -> Self {
        Self {
            momentum,
            decay,
            state: OptState {
                velocity: Vec::new(),
                step_count: 0,
                base_lr: lr,
                current_lr: lr,
            },
            velocity: Vec::new(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.state.current_lr
    }

    /// Plateau scheduling hook; never raises the rate above the base rate.
    pub fn set_lr(&mut self, lr: f64) {
        self.state.current_lr = lr.min(self.state.base_lr);
    }

    pub fn step_count(&self) -> u64 {
        self.state.step_count
    }

    /// Effective rate the next step will use.
    pub fn decayed_lr(&self) -> f64 {
        self.state.current_lr / (1.0 + self.decay * self.state.step_count as f64)
    }

    pub fn state(&self) -> OptState {
        OptState {
            velocity: self
                .velocity
                .iter()
                .map(|v| v.iter().map(|x| x.f64()).collect())
                .collect(),
            ..self.state.clone()
        }
    }

    pub fn step(&mut self, params: &mut [&mut [F]], grads: &[&[F]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "{} parameter tensors, {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![F::zero(); p.len()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::Shape("optimizer bound to a different parameter list".into()));
        }
        for ((p, g), v) in params.iter().zip(grads).zip(&self.velocity) {
            if p.len() != g.len() || p.len() != v.len() {
                return Err(Error::Shape(format!(
                    "parameter of {} values, gradient {}, velocity {}",
                    p.len(),
                    g.len(),
                    v.len()
                )));
            }
        }
        let lr = F::lit(self.decayed_lr());
        let mu = F::lit(self.momentum);
        for ((p, g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            for i in 0..p.len() {
                v[i] = mu * v[i] - lr * g[i];
                p[i] += mu * v[i] - lr * g[i];
            }
        }
        self.state.step_count += 1;
        Ok(())
    }
}
