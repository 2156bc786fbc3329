//! Bias-corrected Adam over a flat parameter vector.

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// Bias-corrected first moment.
    pub fn first_moment(&self) -> Vec<f64> {
        let c = 1.0 - BETA1.powi(self.t);
        self.m.iter().map(|m| m / c).collect()
    }

    /// Bias-corrected second moment.
    pub fn second_moment(&self) -> Vec<f64> {
        let c = 1.0 - BETA2.powi(self.t);
        self.v.iter().map(|v| v / c).collect()
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state has {} entries, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
        Ok(())
    }
}

/// Free-function form of [`Adam::step`].
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut Adam, lr: f64) -> Result<()> {
    state.step(params, grads, lr)
}
