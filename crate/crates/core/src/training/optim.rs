//! AdamW with decoupled weight decay, and the warmup / inverse-square-root schedule.

use crate::model::tensor::{Scalar, Tensor};
use crate::model::ModelParameters;

pub const LR_START: f64 = 1e-7;

/// Linear warmup from `1e-7` to `peak` over `warmup` steps, then
/// `peak * sqrt(warmup / step)`. Steps count from 1.
pub fn lr_schedule(step: u64, peak: f64, warmup: u64) -> f64 {
    let step = step.max(1);
    let warmup = warmup.max(1);
    if step <= warmup {
        if warmup == 1 {
            return peak;
        }
        LR_START + (peak - LR_START) * (step - 1) as f64 / (warmup - 1) as f64
    } else {
        peak * (warmup as f64 / step as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub cfg: AdamConfig,
    pub step: u64,
    m: Vec<Tensor<f64>>,
    v: Vec<Tensor<f64>>,
}

impl AdamW {
    pub fn new<T: Scalar>(params: &ModelParameters<T>, cfg: AdamConfig) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
        Self { cfg, step: 0, m: zeros(), v: zeros() }
    }

    pub fn update<T: Scalar>(&mut self, params: &mut ModelParameters<T>, grads: &[Tensor<f64>], lr: f64) {
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (k, p) in params.tensors_mut().iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[k].data, &mut self.v[k].data, &grads[k].data);
            for i in 0..p.data.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let w = p.data[i].to_f64().unwrap();
                let nw = w - lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * w);
                p.data[i] = T::of(nw);
            }
        }
    }
}
