use serde::{Deserialize, Serialize};

use super::{examples, Sample, Variant};
use crate::encoder::{evaluate, train, EncoderParams, ModelConfig, OptimizerConfig, TracePoint, TrainConfig};
use crate::{seeds, Error, Real};

/// Test accuracy (%) of each variant reported for the full-scale, depth-20 setting.
pub const REFERENCE_ACCURACY: [(Variant, f64); 4] =
    [(Variant::Dense, 75.9), (Variant::Rgb, 79.7), (Variant::Gb, 85.6), (Variant::B, 86.2)];

/// Default desk-scale trunk and training budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeskSettings {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub warmup_steps: usize,
    pub eval_every: usize,
    pub clip_norm: f64,
    pub weight_decay: f64,
}

pub const DESK: DeskSettings = DeskSettings {
    layers: 4,
    d_model: 64,
    heads: 4,
    d_ff: 256,
    steps: 3000,
    lr: 1e-3,
    batch_size: 32,
    warmup_steps: 150,
    eval_every: 300,
    clip_norm: 1.0,
    weight_decay: 0.01,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    /// Shared trunk; `pe_enabled` is set per variant from the two flags below.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub variants: Vec<Variant>,
    /// Sinusoidal positions over the bracketed sequence for the dense baseline.
    pub dense_pe: bool,
    pub tree_pe: bool,
    /// Weight-init seed, shared by all variants.
    pub init_seed: u64,
}

impl AblationConfig {
    /// Desk-scale ablation over all four variants. Seeds derive from `seed`
    /// the same way the command-line tool derives them.
    pub fn desk(seed: u64) -> Self {
        let d = DESK;
        let model = ModelConfig {
            n_layers: d.layers,
            d_model: d.d_model,
            heads: d.heads,
            d_ff: d.d_ff,
            ..ModelConfig::desk(super::VOCAB_SIZE, 10)
        };
        let train = TrainConfig {
            lr: d.lr,
            batch_size: d.batch_size,
            steps: d.steps,
            seed: seeds::derive(seed, "train", 0),
            optimizer: OptimizerConfig::AdamW { beta1: 0.9, beta2: 0.98, eps: 1e-8, weight_decay: d.weight_decay },
            grad_accum: 1,
            eval_every: d.eval_every,
            warmup_steps: d.warmup_steps,
            lr_decay: true,
            clip_norm: Some(d.clip_norm),
            keep_best: true,
        };
        Self {
            model,
            train,
            variants: Variant::ALL.to_vec(),
            dense_pe: true,
            tree_pe: false,
            init_seed: seeds::derive(seed, "init", 0),
        }
    }

    pub fn model_for(&self, v: Variant) -> ModelConfig {
        ModelConfig { pe_enabled: if v == Variant::Dense { self.dense_pe } else { self.tree_pe }, ..self.model }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: Variant,
    pub test_accuracy: Option<f64>,
    pub best_val_accuracy: Option<f64>,
    pub best_step: Option<usize>,
    pub final_loss: Option<f64>,
    pub trace: Vec<TracePoint>,
    /// Set when training failed numerically.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub results: Vec<VariantResult>,
    pub reference: Vec<(Variant, f64)>,
}

impl AblationReport {
    /// Test accuracy in percent.
    pub fn accuracy(&self, v: Variant) -> Option<f64> {
        self.results.iter().find(|r| r.variant == v).and_then(|r| r.test_accuracy).map(|a| 100.0 * a)
    }
}

/// Trains one model per variant with the same budget, data and init seed,
/// then scores each on `test`. Numeric failures are recorded per variant.
pub fn run_ablation<T: Real>(
    cfg: &AblationConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    test_set: &[Sample],
    mut on_result: impl FnMut(&VariantResult),
) -> Result<AblationReport, Error> {
    let mut results = Vec::new();
    for &v in &cfg.variants {
        let model = cfg.model_for(v);
        let (tr, va, te) = (examples(train_set, v)?, examples(val_set, v)?, examples(test_set, v)?);
        let mut params = EncoderParams::<T>::init(&model, cfg.init_seed);
        let eval_batch = cfg.train.batch_size.max(32);
        let outcome = train(&mut params, &model, &cfg.train, &tr, &va)
            .and_then(|rep| Ok((evaluate(&params, &model, &te, eval_batch)?, rep)));
        let result = match outcome {
            Ok((acc, rep)) => VariantResult {
                variant: v,
                test_accuracy: Some(acc),
                best_val_accuracy: rep.best_val_accuracy,
                best_step: rep.best_step,
                final_loss: Some(rep.final_loss),
                trace: rep.trace,
                error: None,
            },
            Err(e) if e.is_numeric() => VariantResult {
                variant: v,
                test_accuracy: None,
                best_val_accuracy: None,
                best_step: None,
                final_loss: None,
                trace: Vec::new(),
                error: Some(e.to_string()),
            },
            Err(e) => return Err(e.into()),
        };
        on_result(&result);
        results.push(result);
    }
    Ok(AblationReport { results, reference: REFERENCE_ACCURACY.to_vec() })
}
