//! Bias-corrected Adam over flat parameter blocks.

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Moment buffers for one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Zeroes the moments and step counter, resized to `len`.
    pub fn reset(&mut self, len: usize) {
        *self = AdamState::new(len);
    }

    /// Rebuilds the buffers after the point set changed. `origin[i]` names the
    /// old point whose moments new point `i` keeps; `None` starts from zero.
    pub fn remap(&mut self, stride: usize, origin: &[Option<usize>]) {
        let mut m = vec![0.0; origin.len() * stride];
        let mut v = vec![0.0; origin.len() * stride];
        for (i, o) in origin.iter().enumerate() {
            if let Some(j) = *o {
                m[i * stride..(i + 1) * stride].copy_from_slice(&self.m[j * stride..(j + 1) * stride]);
                v[i * stride..(i + 1) * stride].copy_from_slice(&self.v[j * stride..(j + 1) * stride]);
            }
        }
        self.m = m;
        self.v = v;
    }
}

/// One Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(Error::arg(format!(
            "adam shapes differ: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = BETA1 * state.m[i] + (1.0 - BETA1) * g;
        state.v[i] = BETA2 * state.v[i] + (1.0 - BETA2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
    Ok(())
}
