use serde::{Deserialize, Serialize};

use crate::nets::{Param, Real};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient added to the gradient before the moment updates.
    pub weight_decay: f64,
}

/// Adam with bias correction and coupled L2 weight decay.
#[derive(Clone, Debug, Default)]
pub struct Adam<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Real> Adam<T> {
    pub fn new() -> Self {
        Self { m: Vec::new(), v: Vec::new(), step: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to `params` using their accumulated gradients.
    pub fn update(&mut self, params: &mut [&mut Param<T>], lr: f64, cfg: &AdamConfig) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "optimizer state does not match the parameter set");
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let (one, wd, eps) = (T::one(), T::lit(cfg.weight_decay), T::lit(cfg.eps));
        let c1 = T::lit(1.0 - cfg.beta1.powi(t));
        let c2 = T::lit(1.0 - cfg.beta2.powi(t));
        let lr = T::lit(lr);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i] + wd * p.value[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p.value[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
