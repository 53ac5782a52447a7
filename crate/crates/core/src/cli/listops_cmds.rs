use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use super::manifest::{write_json, write_text};
use super::{usage, Format, Fp, Global, Manifest, NumericFailure};
use crate::encoder::{
    evaluate, load_checkpoint, save_checkpoint, train as train_model, EncoderParams, ModelConfig, OptimizerConfig,
    TracePoint, TrainConfig,
};
use crate::listops::{
    examples, generate_split, read_dataset, run_ablation, write_dataset, AblationConfig, GenConfig, Sample, Variant,
    DESK, VOCAB_SIZE,
};
use crate::{seeds, Error, Real};

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GenArgs {
    #[arg(long, default_value_t = 20_000)]
    pub train: usize,
    #[arg(long, default_value_t = 2_000)]
    pub val: usize,
    #[arg(long, default_value_t = 5_000)]
    pub test: usize,
    /// Maximum operator nesting depth.
    #[arg(long, default_value_t = 10)]
    pub depth: usize,
    #[arg(long, default_value_t = 2)]
    pub min_args: usize,
    #[arg(long, default_value_t = 5)]
    pub max_args: usize,
    /// Probability that a non-root operand is a digit.
    #[arg(long, default_value_t = 0.75)]
    pub leaf_prob: f64,
    /// Longer samples are redrawn.
    #[arg(long, default_value_t = 512)]
    pub max_tokens: usize,
}

pub fn gen_listops(g: &Global, a: &GenArgs, out: &Path, m: &mut Manifest) -> anyhow::Result<()> {
    let cfg = GenConfig {
        max_depth: a.depth,
        min_args: a.min_args,
        max_args: a.max_args,
        leaf_prob: a.leaf_prob,
        max_tokens: a.max_tokens,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    m.resolve("generator", cfg);
    for (split, count) in [("train", a.train), ("val", a.val), ("test", a.test)] {
        let samples = generate_split(g.seed, split, count, &cfg).map_err(Error::from)?;
        let name = format!("{split}.tsv");
        write_dataset(&out.join(&name), &samples)?;
        m.output(&name);
        eprintln!("{name}: {count} samples");
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeMode {
    /// On for the dense baseline, off for tree variants.
    Auto,
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adamw,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    #[arg(long, default_value_t = DESK.layers)]
    pub layers: usize,
    #[arg(long, default_value_t = DESK.d_model)]
    pub d_model: usize,
    #[arg(long, default_value_t = DESK.heads)]
    pub heads: usize,
    #[arg(long, default_value_t = DESK.d_ff)]
    pub d_ff: usize,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    /// Positional encoding over token order.
    #[arg(long, value_enum, default_value = "auto")]
    pub pe: PeMode,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainingArgs {
    #[arg(long, default_value_t = DESK.steps)]
    pub steps: usize,
    #[arg(long, default_value_t = DESK.lr)]
    pub lr: f64,
    #[arg(long, default_value_t = DESK.batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1)]
    pub grad_accum: usize,
    #[arg(long, default_value_t = DESK.warmup_steps)]
    pub warmup: usize,
    /// Keep the learning rate constant after warmup instead of decaying it linearly.
    #[arg(long)]
    pub constant_lr: bool,
    /// Validation interval in steps (0: only at the end).
    #[arg(long, default_value_t = DESK.eval_every)]
    pub eval_every: usize,
    /// Global gradient-norm clip (0 disables).
    #[arg(long, default_value_t = DESK.clip_norm)]
    pub clip: f64,
    #[arg(long, value_enum, default_value = "adamw")]
    pub optimizer: OptimizerKind,
    #[arg(long, default_value_t = DESK.weight_decay)]
    pub weight_decay: f64,
    /// Score the checkpoint with the best validation accuracy rather than the last one.
    #[arg(long)]
    pub keep_last: bool,
}

impl ModelArgs {
    fn config(&self, variant: Variant) -> ModelConfig {
        ModelConfig {
            n_layers: self.layers,
            d_model: self.d_model,
            heads: self.heads,
            d_ff: self.d_ff,
            vocab_size: VOCAB_SIZE,
            n_classes: 10,
            dropout: self.dropout,
            pe_enabled: pe_for(self.pe, variant),
            ln_eps: 1e-5,
        }
    }
}

fn pe_for(mode: PeMode, variant: Variant) -> bool {
    match mode {
        PeMode::Auto => variant == Variant::Dense,
        PeMode::On => true,
        PeMode::Off => false,
    }
}

impl TrainingArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        let optimizer = match self.optimizer {
            OptimizerKind::Sgd => OptimizerConfig::Sgd,
            OptimizerKind::Adamw => match OptimizerConfig::adamw() {
                OptimizerConfig::AdamW { beta1, beta2, eps, .. } => {
                    OptimizerConfig::AdamW { beta1, beta2, eps, weight_decay: self.weight_decay }
                }
                other => other,
            },
        };
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            steps: self.steps,
            seed: seeds::derive(seed, "train", 0),
            optimizer,
            grad_accum: self.grad_accum,
            eval_every: self.eval_every,
            warmup_steps: self.warmup,
            lr_decay: !self.constant_lr,
            clip_norm: (self.clip > 0.0).then_some(self.clip),
            keep_best: !self.keep_last,
        }
    }
}

fn load_split(dir: &Path, split: &str, required: bool, m: &mut Manifest) -> anyhow::Result<Vec<Sample>> {
    let path = dir.join(format!("{split}.tsv"));
    if !required && !path.exists() {
        return Ok(Vec::new());
    }
    m.input(&path)?;
    Ok(read_dataset(&path)?)
}

fn trace_csv(rows: impl IntoIterator<Item = (String, TracePoint)>) -> anyhow::Result<String> {
    let mut text = String::from("variant,step,train_loss,val_accuracy\n");
    for (v, p) in rows {
        let acc = p.val_accuracy.map(|a| a.to_string()).unwrap_or_default();
        writeln!(text, "{v},{},{},{acc}", p.step, p.train_loss)?;
    }
    Ok(text)
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Directory holding train.tsv and optionally val.tsv and test.tsv.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "b", value_parser = parse_variant)]
    pub variant: Variant,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: crate::listops::ListOpsError| e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct TrainMetrics {
    variant: Variant,
    n_params: usize,
    steps: usize,
    final_loss: Option<f64>,
    best_val_accuracy: Option<f64>,
    best_step: Option<usize>,
    val_accuracy: Option<f64>,
    test_accuracy: Option<f64>,
}

fn run_train<T: Real>(g: &Global, a: &TrainArgs, out: &Path, m: &mut Manifest) -> anyhow::Result<()> {
    let train_set = load_split(&a.data, "train", true, m)?;
    let val_set = load_split(&a.data, "val", false, m)?;
    let test_set = load_split(&a.data, "test", false, m)?;
    let cfg = a.model.config(a.variant);
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let tc = a.training.config(g.seed);
    m.resolve("model", cfg);
    m.resolve("train", tc);
    let (tr, va, te) = (examples(&train_set, a.variant)?, examples(&val_set, a.variant)?, examples(&test_set, a.variant)?);
    let mut params = EncoderParams::<T>::init(&cfg, seeds::derive(g.seed, "init", 0));
    let mut trace = Vec::new();
    let mut metrics = TrainMetrics {
        variant: a.variant,
        n_params: params.n_params(),
        steps: tc.steps,
        final_loss: None,
        best_val_accuracy: None,
        best_step: None,
        val_accuracy: None,
        test_accuracy: None,
    };
    if tc.steps > 0 {
        let rep = train_model(&mut params, &cfg, &tc, &tr, &va).map_err(Error::from)?;
        metrics.final_loss = Some(rep.final_loss);
        metrics.best_val_accuracy = rep.best_val_accuracy;
        metrics.best_step = rep.best_step;
        trace = rep.trace;
    }
    let batch = tc.batch_size.max(32);
    if !va.is_empty() {
        metrics.val_accuracy = Some(evaluate(&params, &cfg, &va, batch).map_err(Error::from)?);
    }
    if !te.is_empty() {
        metrics.test_accuracy = Some(evaluate(&params, &cfg, &te, batch).map_err(Error::from)?);
    }
    save_checkpoint(&out.join("checkpoint.json"), &cfg, &params)?;
    m.output("checkpoint.json");
    match g.format_or(Format::Json) {
        Format::Json => {
            write_json(&out.join("trace.json"), &trace)?;
            m.output("trace.json");
        }
        Format::Csv => {
            write_text(&out.join("trace.csv"), &trace_csv(trace.iter().map(|p| (a.variant.to_string(), *p)))?)?;
            m.output("trace.csv");
        }
    }
    write_json(&out.join("metrics.json"), &metrics)?;
    m.output("metrics.json");
    eprintln!(
        "{}: val {:?} test {:?}",
        a.variant,
        metrics.val_accuracy.map(|x| 100.0 * x),
        metrics.test_accuracy.map(|x| 100.0 * x)
    );
    Ok(())
}

pub fn train(g: &Global, a: &TrainArgs, out: &Path, m: &mut Manifest) -> anyhow::Result<()> {
    match g.fp {
        Fp::F32 => run_train::<f32>(g, a, out, m),
        Fp::F64 => run_train::<f64>(g, a, out, m),
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset file in the `label<TAB>tokens` format.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "b", value_parser = parse_variant)]
    pub variant: Variant,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct EvalRecord {
    variant: Variant,
    samples: usize,
    accuracy: f64,
}

fn run_eval<T: Real>(a: &EvalArgs, out: &Path, m: &mut Manifest) -> anyhow::Result<()> {
    m.input(&a.checkpoint)?;
    m.input(&a.data)?;
    let (cfg, params) = load_checkpoint::<T>(&a.checkpoint)?;
    let data = examples(&read_dataset(&a.data)?, a.variant)?;
    let accuracy = evaluate(&params, &cfg, &data, a.batch_size).map_err(Error::from)?;
    let rec = EvalRecord { variant: a.variant, samples: data.len(), accuracy };
    write_json(&out.join("eval.json"), &rec)?;
    m.output("eval.json");
    eprintln!("{}: accuracy {:.2}% on {} samples", a.variant, 100.0 * accuracy, data.len());
    Ok(())
}

pub fn eval(g: &Global, a: &EvalArgs, out: &Path, m: &mut Manifest) -> anyhow::Result<()> {
    match g.fp {
        Fp::F32 => run_eval::<f32>(a, out, m),
        Fp::F64 => run_eval::<f64>(a, out, m),
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct AblationArgs {
    /// Directory holding train.tsv, val.tsv and test.tsv.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "dense,rgb,gb,b", value_parser = parse_variant)]
    pub variants: Vec<Variant>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
}

fn run_ablation_cmd<T: Real>(g: &Global, a: &AblationArgs, out: &Path, m: &mut Manifest) -> anyhow::Result<()> {
    let train_set = load_split(&a.data, "train", true, m)?;
    let val_set = load_split(&a.data, "val", true, m)?;
    let test_set = load_split(&a.data, "test", true, m)?;
    if a.variants.is_empty() {
        return Err(usage("--variants must name at least one variant"));
    }
    let mut model = a.model.config(Variant::B);
    model.validate().map_err(|e| usage(e.to_string()))?;
    model.pe_enabled = false;
    let cfg = AblationConfig {
        model,
        train: a.training.config(g.seed),
        variants: a.variants.clone(),
        dense_pe: pe_for(a.model.pe, Variant::Dense),
        tree_pe: pe_for(a.model.pe, Variant::B),
        init_seed: seeds::derive(g.seed, "init", 0),
    };
    m.resolve("ablation", &cfg);
    let report = run_ablation::<T>(&cfg, &train_set, &val_set, &test_set, |r| match (&r.error, r.test_accuracy) {
        (Some(e), _) => eprintln!("{}: failed: {e}", r.variant),
        (None, Some(acc)) => eprintln!("{}: test accuracy {:.2}%", r.variant, 100.0 * acc),
        (None, None) => {}
    })?;
    match g.format_or(Format::Json) {
        Format::Json => {
            write_json(&out.join("ablation.json"), &report)?;
            m.output("ablation.json");
        }
        Format::Csv => {
            let mut text = String::from("variant,test_accuracy,best_val_accuracy,best_step,reference\n");
            for r in &report.results {
                let reference = report.reference.iter().find(|(v, _)| *v == r.variant).map(|(_, x)| x.to_string());
                let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
                writeln!(
                    text,
                    "{},{},{},{},{}",
                    r.variant,
                    opt(r.test_accuracy),
                    opt(r.best_val_accuracy),
                    r.best_step.map(|s| s.to_string()).unwrap_or_default(),
                    reference.unwrap_or_default()
                )?;
            }
            write_text(&out.join("ablation.csv"), &text)?;
            m.output("ablation.csv");
            let curves = report.results.iter().flat_map(|r| r.trace.iter().map(|p| (r.variant.to_string(), *p)));
            write_text(&out.join("curves.csv"), &trace_csv(curves)?)?;
            m.output("curves.csv");
        }
    }
    let failed: Vec<String> = report.results.iter().filter(|r| r.error.is_some()).map(|r| r.variant.to_string()).collect();
    if !failed.is_empty() {
        m.write(out)?;
        return Err(NumericFailure(format!("variants failed numerically: {}", failed.join(", "))).into());
    }
    Ok(())
}

pub fn ablation(g: &Global, a: &AblationArgs, out: &Path, m: &mut Manifest) -> anyhow::Result<()> {
    match g.fp {
        Fp::F32 => run_ablation_cmd::<f32>(g, a, out, m),
        Fp::F64 => run_ablation_cmd::<f64>(g, a, out, m),
    }
}
