//! Adam optimizer with bias-corrected moments.

use std::collections::HashMap;

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGrad(String),
    #[error("gradient length {got} does not match parameter `{name}` ({expected})")]
    LengthMismatch {
        name: String,
        expected: usize,
        got: usize,
    },
}

/// First/second moment slots for one parameter.
struct Slot {
    m: Vec<f32>,
    v: Vec<f32>,
    t: u64,
}

pub struct Adam {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    slots: HashMap<String, Slot>,
}

impl Adam {
    pub fn new() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            slots: HashMap::new(),
        }
    }

    /// One Adam update for a named parameter. Moments decay even when the
    /// gradient is zero; the parameter only moves where the gradient says so.
    pub fn step(
        &mut self,
        name: &str,
        param: &mut Tensor,
        grad: &[f32],
        lr: f32,
    ) -> Result<(), OptimError> {
        let n = param.numel();
        if grad.len() != n {
            return Err(OptimError::LengthMismatch {
                name: name.to_string(),
                expected: n,
                got: grad.len(),
            });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(OptimError::NonFiniteGrad(name.to_string()));
        }
        let slot = self.slots.entry(name.to_string()).or_insert_with(|| Slot {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        });
        slot.t += 1;
        let b1 = self.beta1;
        let b2 = self.beta2;
        let bc1 = 1.0 - b1.powi(slot.t as i32);
        let bc2 = 1.0 - b2.powi(slot.t as i32);
        let data = param.data_mut();
        for i in 0..n {
            slot.m[i] = b1 * slot.m[i] + (1.0 - b1) * grad[i];
            slot.v[i] = b2 * slot.v[i] + (1.0 - b2) * grad[i] * grad[i];
            let m_hat = slot.m[i] / bc1;
            let v_hat = slot.v[i] / bc2;
            data[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }

    pub fn reset(&mut self) {
        self.slots.clear();
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self::new()
    }
}
