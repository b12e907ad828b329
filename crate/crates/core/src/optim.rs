//! Adam, cosine learning-rate decay and global-norm gradient clipping.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::nn::{ParamId, ParamStore};
use crate::{Error, Result};

/// Per-parameter gradients aligned with a [`ParamStore`]; `None` where a
/// parameter took no part in the loss.
pub type ParamGrads = Vec<Option<Vec<f64>>>;

/// `lr(step)` falling from `init` to `end` along half a cosine over
/// `total` steps. `lr(0) = init`, `lr(total) = end`.
pub fn cosine_lr(step: usize, total: usize, init: f64, end: f64) -> Result<f64> {
    if total == 0 || step > total {
        return Err(Error::invalid(
            "schedule step",
            format!("step {step} outside 0..={total}"),
        ));
    }
    let phase = core::f64::consts::PI * step as f64 / total as f64;
    Ok(end + 0.5 * (init - end) * (1.0 + math::cos(phase)))
}

pub fn global_norm(grads: &ParamGrads) -> f64 {
    math::sqrt(grads.iter().flatten().flatten().map(|g| g * g).sum())
}

/// Rescales all gradients so that their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut ParamGrads, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grads.iter_mut().flatten().flatten().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Completed updates.
    pub t: u64,
    /// Updates skipped because a gradient was not finite.
    pub skipped: u64,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store
            .entries()
            .iter()
            .map(|e| vec![0.0; e.tensor.numel()])
            .collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: 0,
            skipped: 0,
        }
    }

    /// One bias-corrected update. A step with any non-finite gradient is
    /// skipped entirely and counted; returns whether the update was applied.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads, lr: f64) -> Result<bool> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::shape("adam", &[grads.len()], &[store.len()]));
        }
        if grads.iter().flatten().flatten().any(|g| !g.is_finite()) {
            self.skipped += 1;
            return Ok(false);
        }
        self.t += 1;
        let t = self.t as f64;
        let bc1 = 1.0 - math::pow(self.beta1, t);
        let bc2 = 1.0 - math::pow(self.beta2, t);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let id = ParamId::from_index(i);
            let p = store.get_mut(id).data_mut();
            if g.len() != p.len() {
                return Err(Error::shape("adam", &[g.len()], &[p.len()]));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= lr * mh / (math::sqrt(vh) + self.eps);
            }
        }
        Ok(true)
    }
}
