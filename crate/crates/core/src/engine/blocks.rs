use serde::Serialize;

use super::tiled::{block_grid, DocPattern, LevelPermutation};
use super::EngineError;
use crate::doc_model::LinearDoc;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TileCounts {
    pub nonempty: usize,
    pub skip_ratio: f64,
    /// `nonempty * bq * bk * d_k`: multiply-adds spent on score tiles.
    pub flops_proxy: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkipReport {
    pub n: usize,
    pub s_max: usize,
    pub bq: usize,
    pub bk: usize,
    pub total_blocks: usize,
    pub sorted: TileCounts,
    pub unsorted: TileCounts,
}

fn counts(nonempty: usize, total: usize, bq: usize, bk: usize, d_k: usize) -> TileCounts {
    TileCounts {
        nonempty,
        skip_ratio: if total == 0 { 0.0 } else { 1.0 - nonempty as f64 / total as f64 },
        flops_proxy: (nonempty * bq * bk * d_k) as u64,
    }
}

/// Tile counts of a document's mask under level-sorted and original key order.
pub fn skip_report(doc: &LinearDoc, bq: usize, bk: usize, d_k: usize) -> Result<SkipReport, EngineError> {
    let pattern = DocPattern::new(doc);
    let sorted = block_grid(&pattern, &LevelPermutation::for_pattern(&pattern), bq, bk)?;
    let unsorted = block_grid(&pattern, &LevelPermutation::identity(doc.len()), bq, bk)?;
    let total = sorted.total();
    Ok(SkipReport {
        n: doc.len(),
        s_max: doc.s_max(),
        bq,
        bk,
        total_blocks: total,
        sorted: counts(sorted.count_nonempty(), total, bq, bk, d_k),
        unsorted: counts(unsorted.count_nonempty(), total, bq, bk, d_k),
    })
}

/// Nonempty tiles of a fixed sliding-window band `|i - j| <= window / 2`,
/// the comparator pattern for windowed sparse attention.
pub fn window_tile_count(n: usize, window: usize, bq: usize, bk: usize) -> Result<usize, EngineError> {
    if bq == 0 || bk == 0 {
        return Err(EngineError::ZeroBlock);
    }
    let half = window / 2;
    let mut count = 0;
    for ti in 0..n.div_ceil(bq) {
        let (r0, r1) = (ti * bq, ((ti + 1) * bq).min(n) - 1);
        for tj in 0..n.div_ceil(bk) {
            let (c0, c1) = (tj * bk, ((tj + 1) * bk).min(n) - 1);
            let gap = c0.saturating_sub(r1).max(r0.saturating_sub(c1));
            if gap <= half {
                count += 1;
            }
        }
    }
    Ok(count)
}
