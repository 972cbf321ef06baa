//! Adam over the encoder's projection and sparsely-touched bucket rows.
//!
//! Bucket rows keep moment estimates only once they have received a
//! gradient, and are updated only on steps where they appear in the batch
//! (the "lazy" variant used for large embedding tables). Bias correction
//! uses the global step count.

use std::collections::BTreeMap;

use crate::encoder::{Gradients, NgramEncoder};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// Updates the moments and returns the parameter deltas.
    fn step(&mut self, grad: &[f64], lr: f64, bias1: f64, bias2: f64) -> Vec<f64> {
        let mut delta = Vec::with_capacity(grad.len());
        for ((m, v), g) in self.m.iter_mut().zip(self.v.iter_mut()).zip(grad) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            delta.push(lr * m_hat / (v_hat.sqrt() + EPSILON));
        }
        delta
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    learning_rate: f64,
    step: i32,
    projection: Moments,
    rows: BTreeMap<u32, Moments>,
}

impl Adam {
    pub fn new(dim: usize, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            step: 0,
            projection: Moments::zeros(dim * dim),
            rows: BTreeMap::new(),
        }
    }

    pub fn apply(&mut self, encoder: &mut NgramEncoder, grads: &Gradients) {
        self.step = self.step.saturating_add(1);
        let bias1 = 1.0 - BETA1.powi(self.step);
        let bias2 = 1.0 - BETA2.powi(self.step);
        let lr = self.learning_rate;

        let delta = self.projection.step(&grads.projection, lr, bias1, bias2);
        for (p, d) in encoder.projection_mut().iter_mut().zip(&delta) {
            *p -= d;
        }

        let dim = encoder.config().dim;
        for (&bucket, grad) in &grads.rows {
            let moments = self.rows.entry(bucket).or_insert_with(|| Moments::zeros(dim));
            let delta = moments.step(grad, lr, bias1, bias2);
            // rows whose values would not change stay implicit
            if delta.iter().all(|d| *d == 0.0) {
                continue;
            }
            for (r, d) in encoder.row_mut(bucket).iter_mut().zip(&delta) {
                *r -= d;
            }
        }
    }
}
