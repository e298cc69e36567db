//! Optimizers and learning-rate schedules.

use super::{Params, Scalar};

/// AdamW with decoupled weight decay. Decay applies to matrices only;
/// biases, norms and token vectors are exempt.
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn step<F: Scalar, P: Params<F>>(&mut self, params: &mut P, grads: &P, lr: f64) {
        self.t += 1;
        if self.m.is_empty() {
            params.visit(&mut |_, _, d| {
                self.m.push(vec![0.0; d.len()]);
                self.v.push(vec![0.0; d.len()]);
            });
        }
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let mut idx = 0;
        let (m, v) = (&mut self.m, &mut self.v);
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        params.zip_mut(grads, &mut |shape, p, g| {
            let decay = if shape.len() == 2 { wd } else { 0.0 };
            let ms = &mut m[idx];
            let vs = &mut v[idx];
            for i in 0..p.len() {
                let gi = g[i].to_f64().unwrap();
                ms[i] = b1 * ms[i] + (1.0 - b1) * gi;
                vs[i] = b2 * vs[i] + (1.0 - b2) * gi * gi;
                let mhat = ms[i] / bc1;
                let vhat = vs[i] / bc2;
                let pi = p[i].to_f64().unwrap();
                p[i] = F::from_f(pi - lr * (mhat / (vhat.sqrt() + eps) + decay * pi));
            }
            idx += 1;
        });
    }
}

/// Plain stochastic gradient descent.
pub struct Sgd;

impl Sgd {
    pub fn step<F: Scalar, P: Params<F>>(params: &mut P, grads: &P, lr: f64) {
        let lr = F::from_f(lr);
        params.zip_mut(grads, &mut |_, p, g| {
            for (pi, gi) in p.iter_mut().zip(g) {
                *pi = *pi - lr * *gi;
            }
        });
    }
}

/// Linear warmup over the first `warmup_frac` of steps, then cosine decay
/// to zero.
pub fn warmup_cosine_lr(step: usize, total_steps: usize, warmup_frac: f64, base_lr: f64) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    let warmup = ((total_steps as f64 * warmup_frac).round() as usize).min(total_steps);
    if step < warmup {
        return base_lr * (step + 1) as f64 / warmup as f64;
    }
    let rest = (total_steps - warmup).max(1) as f64;
    let progress = (step - warmup) as f64 / rest;
    0.5 * base_lr * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos())
}

/// Multiply the base rate by `gamma` once per `every` epochs.
pub fn step_decay_lr(epoch: usize, base_lr: f64, gamma: f64, every: usize) -> f64 {
    base_lr * gamma.powi((epoch / every.max(1)) as i32)
}
