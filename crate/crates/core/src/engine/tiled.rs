use ndarray::{s, Array2};

use super::{gather_rows, AttentionInput, EngineError};
use crate::doc_model::{HierPos, LinearDoc};
use crate::mask::{doc_allows, sparse_pairs, AttnMask};
use crate::Real;

pub const DEFAULT_BQ: usize = 128;
pub const DEFAULT_BK: usize = 64;

/// An attention pattern the tiled kernel can evaluate on the fly.
pub trait MaskPattern {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether query `q` may attend key `k` (original, unsorted indices).
    fn allows(&self, q: usize, k: usize) -> bool;

    /// Hierarchy level used to order keys; smaller sorts first.
    fn key_level(&self, k: usize) -> u32;

    /// Sparse form of the same pattern, used only to decide tile occupancy.
    fn sparse(&self) -> &AttnMask;
}

/// Document mask evaluated from hierarchical positions.
#[derive(Debug, Clone)]
pub struct DocPattern {
    positions: Vec<HierPos>,
    levels: Vec<u32>,
    edges: AttnMask,
}

impl DocPattern {
    pub fn new(doc: &LinearDoc) -> Self {
        Self { positions: doc.positions().collect(), levels: doc.levels(), edges: sparse_pairs(doc) }
    }
}

impl MaskPattern for DocPattern {
    fn len(&self) -> usize {
        self.positions.len()
    }

    #[inline]
    fn allows(&self, q: usize, k: usize) -> bool {
        doc_allows(&self.positions[q], &self.positions[k])
    }

    fn key_level(&self, k: usize) -> u32 {
        self.levels[k]
    }

    fn sparse(&self) -> &AttnMask {
        &self.edges
    }
}

/// An explicit sparse mask paired with per-token levels (e.g. tree depths).
#[derive(Debug, Clone, Copy)]
pub struct LeveledMask<'a> {
    pub mask: &'a AttnMask,
    pub levels: &'a [u32],
}

impl MaskPattern for LeveledMask<'_> {
    fn len(&self) -> usize {
        self.mask.n()
    }

    #[inline]
    fn allows(&self, q: usize, k: usize) -> bool {
        self.mask.allows(q, k)
    }

    fn key_level(&self, k: usize) -> u32 {
        self.levels[k]
    }

    fn sparse(&self) -> &AttnMask {
        self.mask
    }
}

/// Key order used by the kernel: `perm[a]` is the original index placed at slot `a`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelPermutation {
    pub perm: Vec<usize>,
    pub inverse: Vec<usize>,
}

impl LevelPermutation {
    pub fn identity(n: usize) -> Self {
        Self { perm: (0..n).collect(), inverse: (0..n).collect() }
    }

    /// Stable sort of indices by level.
    pub fn by_levels(levels: &[u32]) -> Self {
        let mut perm: Vec<usize> = (0..levels.len()).collect();
        perm.sort_by_key(|&i| levels[i]);
        Self::from_perm(perm)
    }

    pub fn from_perm(perm: Vec<usize>) -> Self {
        let mut inverse = vec![0; perm.len()];
        for (slot, &orig) in perm.iter().enumerate() {
            inverse[orig] = slot;
        }
        Self { perm, inverse }
    }

    pub fn for_pattern(pattern: &impl MaskPattern) -> Self {
        let levels: Vec<u32> = (0..pattern.len()).map(|k| pattern.key_level(k)).collect();
        Self::by_levels(&levels)
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(a, &b)| a == b)
    }
}

/// Key/value order by hierarchy level (`[DOC]`, `[SEC]`s, `[SENT]`s, tokens).
/// Queries keep their original order.
pub fn sort_kv(doc: &LinearDoc) -> LevelPermutation {
    LevelPermutation::by_levels(&doc.levels())
}

/// Tile occupancy of the `(query, permuted key)` plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockGrid {
    pub bq: usize,
    pub bk: usize,
    pub t_r: usize,
    pub t_c: usize,
    nonempty: Vec<bool>,
}

impl BlockGrid {
    #[inline]
    pub fn is_nonempty(&self, ti: usize, tj: usize) -> bool {
        self.nonempty[ti * self.t_c + tj]
    }

    pub fn total(&self) -> usize {
        self.t_r * self.t_c
    }

    pub fn count_nonempty(&self) -> usize {
        self.nonempty.iter().filter(|&&b| b).count()
    }
}

/// Marks every tile holding at least one permitted `(query, key)` pair.
pub fn block_grid(
    pattern: &impl MaskPattern,
    order: &LevelPermutation,
    bq: usize,
    bk: usize,
) -> Result<BlockGrid, EngineError> {
    if bq == 0 || bk == 0 {
        return Err(EngineError::ZeroBlock);
    }
    let n = pattern.len();
    if order.len() != n {
        return Err(EngineError::Shape(format!("permutation {} vs mask {}", order.len(), n)));
    }
    let (t_r, t_c) = (n.div_ceil(bq), n.div_ceil(bk));
    let mut nonempty = vec![false; t_r * t_c];
    for (i, j) in pattern.sparse().edges() {
        nonempty[(i / bq) * t_c + order.inverse[j] / bk] = true;
    }
    Ok(BlockGrid { bq, bk, t_r, t_c, nonempty })
}

pub fn build_block_grid(
    doc: &LinearDoc,
    order: &LevelPermutation,
    bq: usize,
    bk: usize,
) -> Result<BlockGrid, EngineError> {
    block_grid(&DocPattern::new(doc), order, bq, bk)
}

/// Running row max `m` and normalizer `l` of the online softmax.
/// Rows that have not yet seen a permitted key hold `m = -inf`, `l = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxStats<T> {
    pub m: Vec<T>,
    pub l: Vec<T>,
}

impl<T: Real> SoftmaxStats<T> {
    pub fn new(n: usize) -> Self {
        Self { m: vec![T::neg_infinity(); n], l: vec![T::zero(); n] }
    }
}

#[derive(Debug, Clone)]
pub struct TiledOutput<T> {
    pub output: Array2<T>,
    pub stats: SoftmaxStats<T>,
    pub grid: BlockGrid,
    pub tiles_processed: usize,
}

/// Tiled forward pass with level-sorted keys over a document mask.
pub fn tiled_forward<T: Real>(
    inp: &AttentionInput<T>,
    doc: &LinearDoc,
    bq: usize,
    bk: usize,
) -> Result<Array2<T>, EngineError> {
    let pattern = DocPattern::new(doc);
    let order = LevelPermutation::for_pattern(&pattern);
    Ok(tiled_forward_with(inp, &pattern, &order, bq, bk)?.output)
}

/// Tiled forward pass over any pattern with an explicit key order.
pub fn tiled_forward_with<T: Real>(
    inp: &AttentionInput<T>,
    pattern: &impl MaskPattern,
    order: &LevelPermutation,
    bq: usize,
    bk: usize,
) -> Result<TiledOutput<T>, EngineError> {
    let n = inp.n();
    if pattern.len() != n {
        return Err(EngineError::Shape(format!("mask {} vs input {}", pattern.len(), n)));
    }
    let grid = block_grid(pattern, order, bq, bk)?;
    let k_sorted = gather_rows(&inp.k, &order.perm);
    let v_sorted = gather_rows(&inp.v, &order.perm);
    let d = inp.d_k();

    let mut out = Array2::<T>::zeros((n, d));
    let mut stats = SoftmaxStats::<T>::new(n);
    let mut tiles_processed = 0;
    let mut p = Array2::<T>::zeros((bq, bk));

    for ti in 0..grid.t_r {
        let r0 = ti * bq;
        let r1 = (r0 + bq).min(n);
        let q_blk = inp.q.slice(s![r0..r1, ..]);
        for tj in 0..grid.t_c {
            if !grid.is_nonempty(ti, tj) {
                continue;
            }
            tiles_processed += 1;
            let c0 = tj * bk;
            let c1 = (c0 + bk).min(n);
            let scores = q_blk.dot(&k_sorted.slice(s![c0..c1, ..]).t());
            let mut p_blk = p.slice_mut(s![..r1 - r0, ..c1 - c0]);

            // Row max over permitted entries; masked entries get zero weight.
            let mut m_tile = vec![T::neg_infinity(); r1 - r0];
            for (r, (s_row, mut p_row)) in scores.rows().into_iter().zip(p_blk.rows_mut()).enumerate() {
                let i = r0 + r;
                for (c, (&sc, pc)) in s_row.iter().zip(p_row.iter_mut()).enumerate() {
                    if pattern.allows(i, order.perm[c0 + c]) {
                        *pc = sc * inp.scale;
                        m_tile[r] = m_tile[r].max(*pc);
                    } else {
                        *pc = T::neg_infinity();
                    }
                }
                let mt = m_tile[r];
                if mt == T::neg_infinity() {
                    p_row.fill(T::zero());
                } else {
                    p_row.mapv_inplace(|x| (x - mt).exp());
                }
            }
            let pv = p_blk.dot(&v_sorted.slice(s![c0..c1, ..]));

            for r in 0..r1 - r0 {
                let mt = m_tile[r];
                if mt == T::neg_infinity() {
                    continue;
                }
                let i = r0 + r;
                let l_tile: T = p_blk.row(r).iter().copied().sum();
                let (m_old, l_old) = (stats.m[i], stats.l[i]);
                let m_new = m_old.max(mt);
                // The first contribution must not evaluate exp(-inf - -inf).
                let keep = if l_old == T::zero() { T::zero() } else { l_old * (m_old - m_new).exp() };
                let add = (mt - m_new).exp();
                let l_new = keep + add * l_tile;
                let mut o = out.row_mut(i);
                for (o, &x) in o.iter_mut().zip(pv.row(r)) {
                    *o = (keep * *o + add * x) / l_new;
                }
                stats.m[i] = m_new;
                stats.l[i] = l_new;
            }
        }
    }
    if let Some(row) = stats.l.iter().position(|&l| l == T::zero()) {
        return Err(EngineError::EmptyRow { row });
    }
    Ok(TiledOutput { output: out, stats, grid, tiles_processed })
}
