use serde::{Deserialize, Serialize};

use super::params::EncoderParams;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd,
    /// Decoupled weight decay, applied to matrices only.
    AdamW { beta1: f64, beta2: f64, eps: f64, weight_decay: f64 },
}

impl OptimizerConfig {
    pub fn adamw() -> Self {
        OptimizerConfig::AdamW { beta1: 0.9, beta2: 0.98, eps: 1e-8, weight_decay: 0.01 }
    }
}

pub struct Optimizer<T> {
    cfg: OptimizerConfig,
    t: i32,
    m: Option<EncoderParams<T>>,
    v: Option<EncoderParams<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(cfg: OptimizerConfig) -> Self {
        Self { cfg, t: 0, m: None, v: None }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One update with already averaged gradients.
    pub fn step(&mut self, params: &mut EncoderParams<T>, grads: &EncoderParams<T>, lr: f64) {
        self.t += 1;
        match self.cfg {
            OptimizerConfig::Sgd => {
                let lr = T::lit(lr);
                for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
                    p.iter_mut().zip(g.2).for_each(|(p, &g)| *p -= lr * g);
                }
            }
            OptimizerConfig::AdamW { beta1, beta2, eps, weight_decay } => {
                let m = self.m.get_or_insert_with(|| params.zeros_like());
                let v = self.v.get_or_insert_with(|| params.zeros_like());
                let bc1 = 1.0 - beta1.powi(self.t);
                let bc2 = 1.0 - beta2.powi(self.t);
                let (b1, b2, eps_t) = (T::lit(beta1), T::lit(beta2), T::lit(eps));
                let step = T::lit(lr / bc1);
                let rbc2 = T::lit(1.0 / bc2);
                let decay: Vec<bool> = params.tensors().iter().map(|(_, shape, _)| shape.len() == 2).collect();
                let wd = T::lit(1.0 - lr * weight_decay);
                for ((((p, g), m), v), dec) in params
                    .tensors_mut()
                    .into_iter()
                    .zip(grads.tensors())
                    .zip(m.tensors_mut())
                    .zip(v.tensors_mut())
                    .zip(decay)
                {
                    for (((p, &g), m), v) in p.iter_mut().zip(g.2).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = b1 * *m + (T::one() - b1) * g;
                        *v = b2 * *v + (T::one() - b2) * g * g;
                        if dec {
                            *p *= wd;
                        }
                        *p -= step * *m / ((*v * rbc2).sqrt() + eps_t);
                    }
                }
            }
        }
    }
}
