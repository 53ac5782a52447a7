use ndarray::{concatenate, s, Array2, Axis};

use super::tiled::{tiled_forward_with, DocPattern, LevelPermutation, MaskPattern};
use super::{head_cols, AttentionInput, EngineError};
use crate::doc_model::LinearDoc;
use crate::Real;

/// Projection weights of one multi-head attention layer, all `d_model x d_model`.
#[derive(Debug, Clone)]
pub struct MhaWeights<T> {
    pub wq: Array2<T>,
    pub wk: Array2<T>,
    pub wv: Array2<T>,
    pub wo: Array2<T>,
    pub heads: usize,
}

impl<T: Real> MhaWeights<T> {
    pub fn d_model(&self) -> usize {
        self.wq.nrows()
    }

    fn check(&self, x: &Array2<T>) -> Result<usize, EngineError> {
        let d = self.d_model();
        let square = |m: &Array2<T>| m.dim() == (d, d);
        if self.heads == 0 || d % self.heads != 0 {
            return Err(EngineError::Shape(format!("{} heads do not divide d_model {}", self.heads, d)));
        }
        if ![&self.wq, &self.wk, &self.wv, &self.wo].into_iter().all(square) || x.ncols() != d {
            return Err(EngineError::Shape(format!("input width {} vs d_model {}", x.ncols(), d)));
        }
        Ok(d / self.heads)
    }
}

/// Multi-head hierarchical attention over a document with level-sorted keys.
pub fn multi_head_attention<T: Real>(
    x: &Array2<T>,
    w: &MhaWeights<T>,
    doc: &LinearDoc,
    bq: usize,
    bk: usize,
) -> Result<Array2<T>, EngineError> {
    let pattern = DocPattern::new(doc);
    let order = LevelPermutation::for_pattern(&pattern);
    multi_head_attention_with(x, w, &pattern, &order, bq, bk)
}

pub fn multi_head_attention_with<T: Real>(
    x: &Array2<T>,
    w: &MhaWeights<T>,
    pattern: &impl MaskPattern,
    order: &LevelPermutation,
    bq: usize,
    bk: usize,
) -> Result<Array2<T>, EngineError> {
    let d_k = w.check(x)?;
    let (q, k, v) = (x.dot(&w.wq), x.dot(&w.wk), x.dot(&w.wv));
    let heads = (0..w.heads)
        .map(|h| {
            let inp = AttentionInput::new(
                head_cols(&q, h, d_k).to_owned(),
                head_cols(&k, h, d_k).to_owned(),
                head_cols(&v, h, d_k).to_owned(),
            )?;
            Ok(tiled_forward_with(&inp, pattern, order, bq, bk)?.output)
        })
        .collect::<Result<Vec<_>, EngineError>>()?;
    let views: Vec<_> = heads.iter().map(|h| h.slice(s![.., ..])).collect();
    let concat = concatenate(Axis(1), &views).map_err(|e| EngineError::Shape(e.to_string()))?;
    Ok(concat.dot(&w.wo))
}
