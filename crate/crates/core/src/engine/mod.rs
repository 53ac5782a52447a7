//! Attention kernels.
//!
//! * [`dense_attention`] / [`dense_masked_attention`]: materialize the full
//!   `n x n` score matrix. Reference implementations only.
//! * [`sparse_attention`]: softmax over each query's permitted keys, reading
//!   the mask in sparse row form. The encoder trains through this path since
//!   it keeps the per-edge probabilities for the backward pass.
//! * [`tiled_forward`]: block-tiled online softmax. Keys and values are
//!   stably sorted by hierarchy level, the `(query, key)` plane is cut into
//!   `bq x bk` tiles, empty tiles are skipped and the mask inside a tile is
//!   re-evaluated from the hierarchy rather than read from storage.

mod blocks;
mod mha;
mod tiled;

use std::ops::{AddAssign, Range};

use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis};
use thiserror::Error;

use crate::mask::{AttnMask, DenseMask};
use crate::Real;

pub use blocks::{skip_report, window_tile_count, SkipReport, TileCounts};
pub use mha::{multi_head_attention, multi_head_attention_with, MhaWeights};
pub use tiled::{
    block_grid, build_block_grid, sort_kv, tiled_forward, tiled_forward_with, BlockGrid, DocPattern,
    LevelPermutation, LeveledMask, MaskPattern, SoftmaxStats, TiledOutput, DEFAULT_BK, DEFAULT_BQ,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("query row {row} has no permitted key")]
    EmptyRow { row: usize },
    #[error("block sizes must be positive")]
    ZeroBlock,
}

impl EngineError {
    pub fn is_numeric(&self) -> bool {
        matches!(self, EngineError::NonFinite(_))
    }
}

/// Queries, keys and values of one attention head, each `n x d_k`.
#[derive(Debug, Clone)]
pub struct AttentionInput<T> {
    pub q: Array2<T>,
    pub k: Array2<T>,
    pub v: Array2<T>,
    pub scale: T,
}

impl<T: Real> AttentionInput<T> {
    /// Validates shapes and finiteness; the logit scale is `1/sqrt(d_k)`.
    pub fn new(q: Array2<T>, k: Array2<T>, v: Array2<T>) -> Result<Self, EngineError> {
        if q.dim() != k.dim() || k.dim() != v.dim() {
            return Err(EngineError::Shape(format!(
                "q {:?}, k {:?}, v {:?}",
                q.dim(),
                k.dim(),
                v.dim()
            )));
        }
        if q.ncols() == 0 {
            return Err(EngineError::Shape("d_k must be positive".into()));
        }
        for (name, m) in [("q", &q), ("k", &k), ("v", &v)] {
            if !m.iter().all(|x| x.is_finite()) {
                return Err(EngineError::NonFinite(name));
            }
        }
        let scale = T::one() / T::lit(q.ncols() as f64).sqrt();
        Ok(Self { q, k, v, scale })
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn d_k(&self) -> usize {
        self.q.ncols()
    }

    pub fn logits(&self) -> Array2<T> {
        self.q.dot(&self.k.t()) * self.scale
    }
}

fn softmax_rows_into_output<T: Real>(mut a: Array2<T>, v: &Array2<T>) -> Array2<T> {
    for mut row in a.rows_mut() {
        let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum: T = row.iter().copied().sum();
        row.mapv_inplace(|x| x / sum);
    }
    a.dot(v)
}

/// Unmasked softmax attention `softmax(QK^T/sqrt(d_k)) V`.
pub fn dense_attention<T: Real>(inp: &AttentionInput<T>) -> Array2<T> {
    softmax_rows_into_output(inp.logits(), &inp.v)
}

/// Masked attention with masked logits set to `-inf` before the row softmax.
pub fn dense_masked_attention<T: Real>(inp: &AttentionInput<T>, mask: &DenseMask) -> Result<Array2<T>, EngineError> {
    let n = inp.n();
    if mask.n() != n {
        return Err(EngineError::Shape(format!("mask {} vs input {}", mask.n(), n)));
    }
    let mut a = inp.logits();
    for (i, mut row) in a.rows_mut().into_iter().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            if !mask.get(i, j) {
                *x = T::neg_infinity();
            }
        }
        if row.iter().all(|x| *x == T::neg_infinity()) {
            return Err(EngineError::EmptyRow { row: i });
        }
    }
    Ok(softmax_rows_into_output(a, &inp.v))
}

/// Maximal runs of consecutive rows that share one contiguous key range.
/// Such runs (every block of a packed all-true batch, for instance) are
/// handled with matrix products instead of per-edge loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum RowRun {
    Block { rows: Range<usize>, cols: Range<usize> },
    Row(usize),
}

pub(crate) fn row_runs(mask: &AttnMask) -> Vec<RowRun> {
    let contiguous = |i: usize| -> Option<Range<usize>> {
        let row = mask.row(i);
        let (&a, &b) = (row.first()?, row.last()?);
        (b - a + 1 == row.len() as u32).then(|| a as usize..b as usize + 1)
    };
    let mut out = Vec::new();
    let mut i = 0;
    while i < mask.n() {
        match contiguous(i) {
            Some(cols) => {
                let mut end = i + 1;
                while end < mask.n() && contiguous(end).as_ref() == Some(&cols) {
                    end += 1;
                }
                out.push(RowRun::Block { rows: i..end, cols });
                i = end;
            }
            None => {
                out.push(RowRun::Row(i));
                i += 1;
            }
        }
    }
    out
}

fn softmax_in_place<T: Real>(p: &mut [T]) {
    let max = p.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let mut sum = T::zero();
    for x in p.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in p.iter_mut() {
        *x /= sum;
    }
}

/// Softmax over each row's permitted keys only.
///
/// Returns the output and the attention probability of every mask edge, laid
/// out in the mask's edge order.
pub fn sparse_attention<T: Real>(
    q: ArrayView2<T>,
    k: ArrayView2<T>,
    v: ArrayView2<T>,
    mask: &AttnMask,
    scale: T,
) -> Result<(Array2<T>, Vec<T>), EngineError> {
    let n = q.nrows();
    if mask.n() != n || k.nrows() != n || v.nrows() != n {
        return Err(EngineError::Shape(format!("mask {} vs input {}", mask.n(), n)));
    }
    let mut out = Array2::zeros((n, v.ncols()));
    let mut probs = vec![T::zero(); mask.nnz()];
    for run in row_runs(mask) {
        match run {
            RowRun::Block { rows, cols } => {
                let mut sc = q.slice(s![rows.clone(), ..]).dot(&k.slice(s![cols.clone(), ..]).t());
                sc.mapv_inplace(|x| x * scale);
                for mut r in sc.rows_mut() {
                    softmax_in_place(r.as_slice_mut().expect("standard layout"));
                }
                out.slice_mut(s![rows.clone(), ..]).assign(&sc.dot(&v.slice(s![cols, ..])));
                probs[mask.row_start(rows.start)..mask.row_start(rows.end)]
                    .copy_from_slice(sc.as_slice().expect("standard layout"));
            }
            RowRun::Row(i) => {
                let row = mask.row(i);
                if row.is_empty() {
                    return Err(EngineError::EmptyRow { row: i });
                }
                let p = &mut probs[mask.row_start(i)..mask.row_start(i) + row.len()];
                let qi = q.row(i);
                for (pj, &j) in p.iter_mut().zip(row) {
                    *pj = qi.dot(&k.row(j as usize)) * scale;
                }
                softmax_in_place(p);
                let mut oi = out.row_mut(i);
                for (&pj, &j) in p.iter().zip(row) {
                    oi.scaled_add(pj, &v.row(j as usize));
                }
            }
        }
    }
    Ok((out, probs))
}

/// Gradients of [`sparse_attention`] given the output gradient `dout` and the
/// saved probabilities; accumulated into `dq`, `dk`, `dv`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sparse_attention_backward<T: Real>(
    q: ArrayView2<T>,
    k: ArrayView2<T>,
    v: ArrayView2<T>,
    mask: &AttnMask,
    probs: &[T],
    dout: ArrayView2<T>,
    scale: T,
    mut dq: ArrayViewMut2<T>,
    mut dk: ArrayViewMut2<T>,
    mut dv: ArrayViewMut2<T>,
) {
    let mut ds = Vec::new();
    for run in row_runs(mask) {
        match run {
            RowRun::Block { rows, cols } => {
                let (r, c) = (rows.len(), cols.len());
                let p = ArrayView2::from_shape((r, c), &probs[mask.row_start(rows.start)..mask.row_start(rows.end)])
                    .expect("run covers a full block");
                let dob = dout.slice(s![rows.clone(), ..]);
                dv.slice_mut(s![cols.clone(), ..]).add_assign(&p.t().dot(&dob));
                let mut dsb = dob.dot(&v.slice(s![cols.clone(), ..]).t());
                for (mut dr, pr) in dsb.rows_mut().into_iter().zip(p.rows()) {
                    let dot = dr.dot(&pr);
                    dr.zip_mut_with(&pr, |g, &pij| *g = pij * (*g - dot) * scale);
                }
                dq.slice_mut(s![rows.clone(), ..]).add_assign(&dsb.dot(&k.slice(s![cols.clone(), ..])));
                dk.slice_mut(s![cols, ..]).add_assign(&dsb.t().dot(&q.slice(s![rows, ..])));
            }
            RowRun::Row(i) => {
                let row = mask.row(i);
                let p = &probs[mask.row_start(i)..mask.row_start(i) + row.len()];
                let doi = dout.row(i);
                ds.clear();
                ds.extend(row.iter().map(|&j| doi.dot(&v.row(j as usize))));
                let dot: T = p.iter().zip(&ds).map(|(&a, &b)| a * b).sum();
                for ((&j, &pij), &dsij) in row.iter().zip(p).zip(&ds) {
                    let j = j as usize;
                    let g = pij * (dsij - dot) * scale;
                    dq.row_mut(i).scaled_add(g, &k.row(j));
                    dk.row_mut(j).scaled_add(g, &q.row(i));
                    dv.row_mut(j).scaled_add(pij, &doi);
                }
            }
        }
    }
}

/// Splits columns `h*d_k .. (h+1)*d_k` out of a packed multi-head matrix.
pub(crate) fn head_cols<T: Real>(m: &Array2<T>, h: usize, d_k: usize) -> ArrayView2<'_, T> {
    m.slice(s![.., h * d_k..(h + 1) * d_k])
}

pub(crate) fn gather_rows<T: Real>(m: &Array2<T>, idx: &[usize]) -> Array2<T> {
    m.select(Axis(0), idx)
}
