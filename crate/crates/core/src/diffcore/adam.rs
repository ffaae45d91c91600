use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use crate::error::{Error, Result};

/// Adam moment accumulators with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One update of the trainable entries of `params`. Frozen blocks are
    /// left untouched and their gradients ignored.
    pub fn update(&mut self, params: &mut ParamSet, grads: &[f64], lr: f64) -> Result<()> {
        let n = params.len();
        if grads.len() != n {
            return Err(Error::dim("adam gradient", n, grads.len()));
        }
        if self.m.len() != n {
            return Err(Error::dim("adam state", n, self.m.len()));
        }
        let mask = params.trainable_mask();
        if let Some(i) = (0..n).find(|&i| mask[i] && !grads[i].is_finite()) {
            return Err(Error::NonFiniteGradient {
                name: params.describe(i),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in (0..n).filter(|&i| mask[i]) {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params.values[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
