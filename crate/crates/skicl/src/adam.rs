//! Bias-corrected Adam with the stepwise-decay learning rate schedule.

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.values.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.values.len()]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One Adam update over every parameter. Gradients must have been
    /// populated since the last `zero_grads`.
    pub fn step(&mut self, params: &mut ParamStore, lr: f64) -> Result<()> {
        for i in 0..params.len() {
            if !params.get(i).grad_set {
                return Err(Error::MissingGrad(params.get(i).name.clone()));
            }
        }
        self.t += 1;
        let t = self.t as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for i in 0..params.len() {
            let p = params.values_mut(i);
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for k in 0..p.values.len() {
                let g = p.grad[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                p.values[k] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Stepwise decay: `base * decay^(epoch / every)` with integer division,
/// epochs counted from 0.
pub fn scheduled_lr(base: f64, decay: f64, every: usize, epoch: usize) -> f64 {
    base * decay.powi((epoch / every) as i32)
}
