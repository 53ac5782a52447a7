//! Trainable hierarchical encoder.
//!
//! Token embeddings (plus the hierarchical positional encoding when enabled)
//! feed a stack of pre-LN blocks:
//!
//! ```text
//! x <- x + Dropout(MHSA(LN1(x)))      attention restricted to the input mask
//! x <- x + Dropout(FFN(LN2(x)))       FFN = W2 GELU(W1 x + b1) + b2
//! ```
//!
//! and a classification head `W_cls LN(x_0) + b_cls` on the first token (the
//! document anchor, or the root operator for ListOps). Gradients are written
//! out by hand in [`backward`](backward::backward); attention gradients flow
//! only through permitted mask entries.
//!
//! Several samples are packed into one row-stacked batch with a
//! block-diagonal mask so the dense projections run as single matrix products.

mod backward;
mod forward;
mod gradcheck;
mod optim;
mod params;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doc_model::{LinearDoc, NodeKind, LEVELS};
use crate::mask::{sparse_pairs, AttnMask};

pub use backward::{backward, backward_batch};
pub use forward::{forward, forward_batch, softmax, ForwardCache, Forward};
pub use gradcheck::{gradient_check, TensorCheck, REL_FLOOR};
pub use optim::{Optimizer, OptimizerConfig};
pub use params::{load_checkpoint, save_checkpoint, Checkpoint, EncoderParams, LayerParams, CHECKPOINT_FORMAT};
pub use train::{evaluate, loss, train, TracePoint, TrainConfig, TrainReport};

/// Embedding rows reserved for `[DOC]`, `[SEC]`, `[SENT]`; word `w` maps to row `w + ANCHOR_IDS`.
pub const ANCHOR_IDS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncoderError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("token id {id} at position {pos} outside vocabulary of {vocab}")]
    IdOutOfVocab { id: u32, pos: usize, vocab: usize },
    #[error("label {label} outside {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("input mask covers {mask} tokens, input has {ids}")]
    MaskLength { mask: usize, ids: usize },
    #[error("positional encoding enabled but input has no positions")]
    MissingPositions,
    #[error("non-finite activation after layer {layer}")]
    NonFiniteActivation { layer: usize },
    #[error("loss diverged at step {step}")]
    Diverged { step: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
    #[error(transparent)]
    Hpe(#[from] crate::hpe::HpeError),
}

impl EncoderError {
    pub fn is_numeric(&self) -> bool {
        match self {
            EncoderError::NonFiniteActivation { .. } | EncoderError::Diverged { .. } => true,
            EncoderError::Engine(e) => e.is_numeric(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub n_classes: usize,
    pub dropout: f64,
    pub pe_enabled: bool,
    pub ln_eps: f64,
}

impl ModelConfig {
    /// Desk-scale ListOps trunk: 4 layers, width 64, 4 heads, FFN 256.
    pub fn desk(vocab_size: usize, n_classes: usize) -> Self {
        Self {
            n_layers: 4,
            d_model: 64,
            heads: 4,
            d_ff: 256,
            vocab_size,
            n_classes,
            dropout: 0.0,
            pe_enabled: false,
            ln_eps: 1e-5,
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: &str| Err(EncoderError::Config(m.to_string()));
        if self.n_layers == 0 || self.d_model == 0 || self.heads == 0 || self.vocab_size == 0 || self.n_classes == 0 {
            return bad("all sizes must be positive");
        }
        if self.d_model % self.heads != 0 {
            return bad("heads must divide d_model");
        }
        if self.d_ff < self.d_model {
            return bad("d_ff must be at least d_model");
        }
        if self.pe_enabled && self.d_model % 2 != 0 {
            return bad("positional encoding needs an even d_model");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Per-token position indices, `levels` values per token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Positions {
    pub levels: usize,
    pub flat: Vec<u32>,
}

impl Positions {
    /// One level, numbering tokens `1..=n`.
    pub fn sequential(n: usize) -> Self {
        Self { levels: 1, flat: (1..=n as u32).collect() }
    }
}

/// One model input: embedding ids, the attention mask and optional positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelInput {
    pub ids: Vec<u32>,
    pub mask: AttnMask,
    pub positions: Option<Positions>,
}

impl ModelInput {
    /// Document input with its hierarchical mask and positions.
    pub fn from_doc(doc: &LinearDoc) -> Self {
        let ids = doc
            .tokens()
            .iter()
            .map(|t| match t.kind {
                NodeKind::Regular => t.vocab.expect("regular token carries an id") + ANCHOR_IDS,
                kind => kind.level(),
            })
            .collect();
        let flat = doc.positions().flat_map(|p| p.0).collect();
        Self { ids, mask: sparse_pairs(doc), positions: Some(Positions { levels: LEVELS, flat }) }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub input: ModelInput,
    pub label: usize,
}
