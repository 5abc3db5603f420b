use serde::{Deserialize, Serialize};

use super::Parametrized;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Adam (bias-corrected, beta1 0.9, beta2 0.999, eps 1e-8) or plain SGD.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<T>,
    v: Vec<T>,
    steps: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: T::lit(lr),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            m: Vec::new(),
            v: Vec::new(),
            steps: 0,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            ..Self::adam(lr)
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to `net` given its flat gradient.
    pub fn step<P: Parametrized<T> + ?Sized>(&mut self, net: &mut P, grad: &[T]) -> Result<()> {
        let mut params = net.params();
        self.step_slice(&mut params, grad)?;
        if let Some((i, v)) = params.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                index: i,
                value: v.to_f64_lossy(),
            });
        }
        net.set_params(&params)
    }

    /// Updates a raw parameter slice in place.
    pub fn step_slice(&mut self, params: &mut [T], grad: &[T]) -> Result<()> {
        if params.len() != grad.len() {
            return Err(Error::DimensionMismatch {
                context: "optimizer gradient",
                expected: params.len(),
                got: grad.len(),
            });
        }
        if let Some((i, g)) = grad.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                index: i,
                value: g.to_f64_lossy(),
            });
        }
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, &g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != params.len() {
                    self.m = vec![T::zero(); params.len()];
                    self.v = vec![T::zero(); params.len()];
                }
                let t = self.steps as i32;
                let c1 = T::one() - self.beta1.powi(t);
                let c2 = T::one() - self.beta2.powi(t);
                for ((p, &g), (m, v)) in params
                    .iter_mut()
                    .zip(grad)
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                {
                    *m = self.beta1 * *m + (T::one() - self.beta1) * g;
                    *v = self.beta2 * *v + (T::one() - self.beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
        }
        Ok(())
    }
}
