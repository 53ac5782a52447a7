//! Hierarchical sinusoidal positional encoding.
//!
//! Each level index `p^l` goes through the usual sin/cos bank and the banks are
//! summed over levels: component `2k` is `sum_l sin(w_k p^l)` and component
//! `2k+1` is `sum_l cos(w_k p^l)` with `w_k = base^(-2k/d_model)`.
//!
//! Values are computed in `f64` and rounded once to the target width.

use ndarray::Array2;
use thiserror::Error;

use crate::doc_model::{LinearDoc, LEVELS};
use crate::Real;

pub const DEFAULT_BASE: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HpeError {
    #[error("d_model must be even and positive, got {0}")]
    OddModelDim(usize),
    #[error("level count must be positive")]
    NoLevels,
    #[error("frequency index {k} out of range for d_model {d_model}")]
    FrequencyOutOfRange { k: usize, d_model: usize },
    #[error("position has {got} levels, encoder expects {want}")]
    LevelMismatch { got: usize, want: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EncodingConfig {
    pub d_model: usize,
    pub levels: usize,
    pub base: f64,
}

impl EncodingConfig {
    pub fn new(d_model: usize, levels: usize) -> Result<Self, HpeError> {
        Self::with_base(d_model, levels, DEFAULT_BASE)
    }

    pub fn with_base(d_model: usize, levels: usize, base: f64) -> Result<Self, HpeError> {
        if d_model == 0 || d_model % 2 != 0 {
            return Err(HpeError::OddModelDim(d_model));
        }
        if levels == 0 {
            return Err(HpeError::NoLevels);
        }
        Ok(Self { d_model, levels, base })
    }

    /// Three-level document encoding.
    pub fn document(d_model: usize) -> Result<Self, HpeError> {
        Self::new(d_model, LEVELS)
    }
}

/// Angular frequency of the k-th sin/cos pair.
pub fn omega(k: usize, cfg: &EncodingConfig) -> Result<f64, HpeError> {
    if k >= cfg.d_model / 2 {
        return Err(HpeError::FrequencyOutOfRange { k, d_model: cfg.d_model });
    }
    Ok(cfg.base.powf(-2.0 * k as f64 / cfg.d_model as f64))
}

fn frequencies(cfg: &EncodingConfig) -> Vec<f64> {
    (0..cfg.d_model / 2).map(|k| cfg.base.powf(-2.0 * k as f64 / cfg.d_model as f64)).collect()
}

fn write_row<T: Real>(p: &[u32], freqs: &[f64], out: &mut [T]) {
    for (k, &w) in freqs.iter().enumerate() {
        let (mut s, mut c) = (0.0, 0.0);
        for &pl in p {
            let (sin, cos) = (w * pl as f64).sin_cos();
            s += sin;
            c += cos;
        }
        out[2 * k] = T::lit(s);
        out[2 * k + 1] = T::lit(c);
    }
}

pub fn encode_position<T: Real>(p: &[u32], cfg: &EncodingConfig) -> Result<Vec<T>, HpeError> {
    if p.len() != cfg.levels {
        return Err(HpeError::LevelMismatch { got: p.len(), want: cfg.levels });
    }
    let mut out = vec![T::zero(); cfg.d_model];
    write_row(p, &frequencies(cfg), &mut out);
    Ok(out)
}

/// Encodes a flat list of positions, `cfg.levels` indices per row.
pub fn encode_positions<T: Real>(flat: &[u32], cfg: &EncodingConfig) -> Result<Array2<T>, HpeError> {
    if flat.len() % cfg.levels != 0 {
        return Err(HpeError::LevelMismatch { got: flat.len() % cfg.levels, want: cfg.levels });
    }
    let n = flat.len() / cfg.levels;
    let freqs = frequencies(cfg);
    let mut out = Array2::zeros((n, cfg.d_model));
    for (p, mut row) in flat.chunks_exact(cfg.levels).zip(out.rows_mut()) {
        write_row(p, &freqs, row.as_slice_mut().expect("standard layout"));
    }
    Ok(out)
}

/// One encoding row per token of `doc`.
pub fn encode_sequence<T: Real>(doc: &LinearDoc, cfg: &EncodingConfig) -> Result<Array2<T>, HpeError> {
    if cfg.levels != LEVELS {
        return Err(HpeError::LevelMismatch { got: LEVELS, want: cfg.levels });
    }
    let flat: Vec<u32> = doc.positions().flat_map(|p| p.0).collect();
    encode_positions(&flat, cfg)
}
