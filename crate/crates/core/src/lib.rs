//! Structure-aware sparse attention for hierarchical documents.
//!
//! A document is a tree of sections, sentences and tokens. [`doc_model`]
//! flattens it depth-first with one anchor token per structural node and
//! assigns every token a hierarchical position vector. Those positions drive
//! both the hierarchical positional encoding ([`hpe`]) and the sample-specific
//! attention pattern ([`mask`]): tokens exchange information only with their
//! siblings, their parent and their children.
//!
//! [`engine`] evaluates masked attention three ways: a dense reference, a
//! sparse row-wise form used for training, and a block-tiled online-softmax
//! kernel that sorts keys by hierarchy level and skips empty tiles.
//! [`encoder`] stacks pre-LN blocks over that attention with hand-written
//! reverse-mode gradients, and [`listops`] provides the nested list-operation
//! task used to compare attention variants.

pub mod cli;
pub mod doc_model;
pub mod encoder;
pub mod engine;
pub mod hpe;
pub mod listops;
pub mod mask;
pub mod seeds;
pub mod synth;

mod error;
mod real;

pub use error::{Error, Result};
pub use real::Real;
