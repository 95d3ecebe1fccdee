use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::layers::ParamSet;
use crate::tensor::{Scalar, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Bias-corrected Adam with per-parameter moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: BTreeMap<String, Vec<T>>,
    v: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Number of updates applied so far.
    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Apply one update to every parameter in `params`. Gradients are only
    /// read; zeroing them is the caller's job.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        for (name, p) in params.iter() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Contract(format!("missing gradient for parameter {name}")))?;
            if g.shape() != p.shape() {
                return Err(Error::dim(
                    "adam_step",
                    format!("gradient for {name} has shape {:?}, parameter {:?}", g.shape(), p.shape()),
                ));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let bc1 = T::of(1.0 - self.beta1.powi(t));
        let bc2 = T::of(1.0 - self.beta2.powi(t));
        let (lr, eps) = (T::of(self.lr), T::of(self.eps));
        let one = T::one();
        for (name, p) in params.iter_mut() {
            let g = grads[name].data();
            let m = self.m.entry(name.to_string()).or_insert_with(|| vec![T::zero(); g.len()]);
            let v = self.v.entry(name.to_string()).or_insert_with(|| vec![T::zero(); g.len()]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// First and second moment buffers by parameter name.
    pub fn moments(&self) -> impl Iterator<Item = (&str, &[T], &[T])> {
        self.m.iter().map(|(k, m)| (k.as_str(), m.as_slice(), self.v[k].as_slice()))
    }

    /// Rebuild a state from persisted moments.
    pub fn restore(lr: f64, t: u64, moments: BTreeMap<String, (Vec<T>, Vec<T>)>) -> Self {
        let mut state = Self::new(lr);
        state.t = t;
        for (name, (m, v)) in moments {
            state.m.insert(name.clone(), m);
            state.v.insert(name, v);
        }
        state
    }
}
