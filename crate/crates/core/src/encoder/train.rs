use ndarray::ArrayView1;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::backward::backward_batch;
use super::forward::{forward_batch, softmax};
use super::optim::{Optimizer, OptimizerConfig};
use super::params::EncoderParams;
use super::{EncoderError, Example, ModelConfig, ModelInput};
use crate::{seeds, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Optimizer updates.
    pub steps: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    /// Micro-batches summed into one update.
    pub grad_accum: usize,
    /// Validation interval in updates; 0 disables.
    pub eval_every: usize,
    pub warmup_steps: usize,
    /// Linear decay of the learning rate to zero after warmup.
    pub lr_decay: bool,
    pub clip_norm: Option<f64>,
    /// Restore the parameters with the best validation accuracy at the end.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 32,
            steps: 1000,
            seed: 0,
            optimizer: OptimizerConfig::adamw(),
            grad_accum: 1,
            eval_every: 0,
            warmup_steps: 0,
            lr_decay: false,
            clip_norm: None,
            keep_best: false,
        }
    }
}

impl TrainConfig {
    fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        if self.lr_decay {
            let rest = (self.steps - self.warmup_steps).max(1) as f64;
            return self.lr * (1.0 - (step - self.warmup_steps) as f64 / rest);
        }
        self.lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    /// Mean training loss over updates since the previous point.
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub final_loss: f64,
    pub best_val_accuracy: Option<f64>,
    pub best_step: Option<usize>,
    pub trace: Vec<TracePoint>,
}

/// Cross-entropy of one logit row.
pub fn loss<T: Real>(logits: ArrayView1<T>, label: usize) -> T {
    -softmax(logits)[label].ln()
}

/// Accuracy under argmax prediction; ties go to the lowest class.
pub fn evaluate<T: Real>(
    params: &EncoderParams<T>,
    cfg: &ModelConfig,
    data: &[Example],
    batch_size: usize,
) -> Result<f64, EncoderError> {
    if data.is_empty() {
        return Err(EncoderError::EmptyDataset);
    }
    let mut correct = 0usize;
    for chunk in data.chunks(batch_size.max(1)) {
        let inputs: Vec<&ModelInput> = chunk.iter().map(|e| &e.input).collect();
        let cache = forward_batch(params, cfg, &inputs, None::<&mut rand_chacha::ChaCha8Rng>)?;
        for (row, ex) in cache.logits().rows().into_iter().zip(chunk) {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            correct += usize::from(best == ex.label);
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Mini-batch training of the summed-then-averaged cross-entropy.
pub fn train<T: Real>(
    params: &mut EncoderParams<T>,
    cfg: &ModelConfig,
    tc: &TrainConfig,
    train: &[Example],
    val: &[Example],
) -> Result<TrainReport, EncoderError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(EncoderError::EmptyDataset);
    }
    if tc.batch_size == 0 || tc.grad_accum == 0 {
        return Err(EncoderError::Config("batch size and accumulation must be positive".into()));
    }
    let mut opt = Optimizer::new(tc.optimizer);
    let mut dropout_rng = seeds::rng(tc.seed, "dropout", 0);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0;
    let mut next_batch = |n: usize| -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if cursor == order.len() {
                order = (0..train.len()).collect();
                order.shuffle(&mut seeds::rng(tc.seed, "shuffle", epoch));
                epoch += 1;
                cursor = 0;
            }
            let take = (n - out.len()).min(order.len() - cursor);
            out.extend_from_slice(&order[cursor..cursor + take]);
            cursor += take;
        }
        out
    };

    let mut report =
        TrainReport { steps: 0, final_loss: f64::NAN, best_val_accuracy: None, best_step: None, trace: Vec::new() };
    let mut best: Option<EncoderParams<T>> = None;
    let mut grads = params.zeros_like();
    let mut window = (0.0, 0usize);
    let per_update = (tc.batch_size * tc.grad_accum) as f64;
    for step in 0..tc.steps {
        grads.scale(T::zero());
        let mut total = T::zero();
        for _ in 0..tc.grad_accum {
            let idx = next_batch(tc.batch_size);
            let inputs: Vec<&ModelInput> = idx.iter().map(|&i| &train[i].input).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| train[i].label).collect();
            let cache = forward_batch(params, cfg, &inputs, Some(&mut dropout_rng))?;
            total += backward_batch(params, cfg, &cache, &labels, &mut grads)?;
        }
        let mean_loss = total.to_f64_lossless() / per_update;
        if !mean_loss.is_finite() || !grads.all_finite() {
            return Err(EncoderError::Diverged { step });
        }
        grads.scale(T::lit(1.0 / per_update));
        if let Some(max) = tc.clip_norm {
            let norm = grads.sq_norm().sqrt();
            if norm > max {
                grads.scale(T::lit(max / norm));
            }
        }
        opt.step(params, &grads, tc.lr_at(step));
        report.steps = step + 1;
        report.final_loss = mean_loss;
        window.0 += mean_loss;
        window.1 += 1;

        let last = step + 1 == tc.steps;
        if (tc.eval_every > 0 && (step + 1) % tc.eval_every == 0) || last {
            let val_accuracy = if val.is_empty() { None } else { Some(evaluate(params, cfg, val, tc.batch_size.max(32))?) };
            if let Some(acc) = val_accuracy {
                if report.best_val_accuracy.map_or(true, |b| acc > b) {
                    report.best_val_accuracy = Some(acc);
                    report.best_step = Some(step + 1);
                    if tc.keep_best {
                        best = Some(params.clone());
                    }
                }
            }
            report.trace.push(TracePoint { step: step + 1, train_loss: window.0 / window.1 as f64, val_accuracy });
            window = (0.0, 0);
        }
    }
    if let Some(b) = best {
        *params = b;
    }
    Ok(report)
}
