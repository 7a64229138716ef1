use serde::{Deserialize, Serialize};

use super::{Parameterized, Tensor};
use crate::error::{CltsError, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;

/// Adaptive-moment optimizer state (bias-corrected first/second moments).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new<M: Parameterized + ?Sized>(learning_rate: f64, model: &M) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(CltsError::Config(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        let zeros = model.zero_grads();
        Ok(Adam {
            learning_rate,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.first, &self.second)
    }

    /// Applies one update. Gradients are validated before any parameter moves,
    /// so a rejected step leaves both model and state untouched.
    pub fn step<M: Parameterized + ?Sized>(&mut self, model: &mut M, grads: &[Tensor]) -> Result<()> {
        let names: Vec<String> = model.parameters().into_iter().map(|(n, _)| n).collect();
        if grads.len() != names.len() {
            return Err(CltsError::dimension("gradient block count", names.len(), grads.len()));
        }
        for ((name, g), m) in names.iter().zip(grads).zip(&self.first) {
            if g.shape() != m.shape() {
                return Err(CltsError::dimension(
                    format!("gradient block `{name}`"),
                    m.len(),
                    g.len(),
                ));
            }
            if !g.is_finite() {
                return Err(CltsError::Numeric { block: name.clone() });
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let lr = self.learning_rate;
        for (((p, g), m), v) in model
            .parameters_mut()
            .into_iter()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
                *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *pi -= lr * m_hat / (v_hat.sqrt() + EPSILON);
            }
        }
        Ok(())
    }
}
