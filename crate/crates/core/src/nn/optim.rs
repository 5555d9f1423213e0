//! Adam and classical-momentum SGD over a flat list of parameter buffers.

use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::{GestaltError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
    SgdMomentum {
        lr: f64,
        momentum: f64,
    },
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn sgd(lr: f64, momentum: f64) -> Self {
        OptimizerKind::SgdMomentum { lr, momentum }
    }

    pub fn learning_rate(&self) -> f64 {
        match *self {
            OptimizerKind::Adam { lr, .. } | OptimizerKind::SgdMomentum { lr, .. } => lr,
        }
    }
}

/// Optimizer hyperparameters plus per-parameter moment buffers.
///
/// Adam uses `first`/`second`; SGD uses `first` as the velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub kind: OptimizerKind,
    pub timestep: u64,
    pub first: Vec<Vec<T>>,
    pub second: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, shapes: &[usize]) -> Self {
        let buffers = || shapes.iter().map(|&n| vec![T::zero(); n]).collect();
        let second = match kind {
            OptimizerKind::Adam { .. } => buffers(),
            OptimizerKind::SgdMomentum { .. } => Vec::new(),
        };
        Self {
            kind,
            timestep: 0,
            first: buffers(),
            second,
        }
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(GestaltError::ShapeMismatch(format!(
                "optimizer holds {} buffers, got {} params / {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.first[i].len() {
                return Err(GestaltError::ShapeMismatch(format!(
                    "parameter {i}: {} values, grad {}, state {}",
                    p.len(),
                    g.len(),
                    self.first[i].len()
                )));
            }
        }
        self.timestep += 1;
        match self.kind {
            OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                epsilon,
            } => {
                let t = self.timestep as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let (b1, b2) = (T::from_f64_lossy(beta1), T::from_f64_lossy(beta2));
                let step = T::from_f64_lossy(lr / c1);
                let c2 = T::from_f64_lossy(c2);
                let eps = T::from_f64_lossy(epsilon);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let m = &mut self.first[i];
                    let v = &mut self.second[i];
                    for j in 0..p.len() {
                        let gj = g[j];
                        m[j] = b1 * m[j] + (T::one() - b1) * gj;
                        v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                        p[j] -= step * m[j] / ((v[j] / c2).sqrt() + eps);
                    }
                }
            }
            OptimizerKind::SgdMomentum { lr, momentum } => {
                let lr = T::from_f64_lossy(lr);
                let mu = T::from_f64_lossy(momentum);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let vel = &mut self.first[i];
                    for j in 0..p.len() {
                        vel[j] = mu * vel[j] - lr * g[j];
                        p[j] += vel[j];
                    }
                }
            }
        }
        Ok(())
    }
}
