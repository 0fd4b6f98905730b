//! Adam with a constant learning rate over a flat parameter buffer.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<S> {
    cfg: AdamConfig,
    m: Vec<S>,
    v: Vec<S>,
    step: i32,
}

impl<S: Scalar> Adam<S> {
    pub fn new(cfg: AdamConfig, len: usize) -> Self {
        Adam {
            cfg,
            m: vec![S::zero(); len],
            v: vec![S::zero(); len],
            step: 0,
        }
    }

    /// One update of `params[ranges]` from `grad[ranges]`.
    pub fn step(&mut self, params: &mut [S], grad: &[S], ranges: &[Range<usize>], lr: f64) {
        self.step += 1;
        let b1 = S::lit(self.cfg.beta1);
        let b2 = S::lit(self.cfg.beta2);
        let one = S::one();
        let eps = S::lit(self.cfg.eps);
        let c1 = one - b1.powi(self.step);
        let c2 = one - b2.powi(self.step);
        let lr = S::lit(lr);
        for range in ranges {
            for i in range.clone() {
                let g = grad[i];
                self.m[i] = b1 * self.m[i] + (one - b1) * g;
                self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
                let m_hat = self.m[i] / c1;
                let v_hat = self.v[i] / c2;
                params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Rescale `grad[ranges]` so its global L2 norm is at most `max_norm`.
pub fn clip_grad_norm<S: Scalar>(grad: &mut [S], ranges: &[Range<usize>], max_norm: f64) -> f64 {
    let norm = ranges
        .iter()
        .flat_map(|r| grad[r.clone()].iter())
        .map(|&g| g.as_f64() * g.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = S::lit(max_norm / norm);
        for r in ranges {
            grad[r.clone()].iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}
