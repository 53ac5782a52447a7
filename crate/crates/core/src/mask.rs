//! Hierarchical attention masks.
//!
//! Entry `(i, j)` permits query `i` to attend key `j`. For three-level
//! documents the mask is the OR of three per-level Iverson products over
//! [`HierPos`] components:
//!
//! ```text
//! doc:  [p2_i = 0][p2_j = 0]
//! sec:  [p3_i = 0][p3_j = 0][p1_i = p1_j]
//! sent: [p1_i = p1_j][p2_i = p2_j]
//! ```
//!
//! [`tree_mask`] builds the same pattern from a parent array for trees of any
//! depth, with the up/down/sibling edge families switchable. [`AttnMask`]
//! stores rows in compressed sparse form; the dense [`DenseMask`] view is a
//! test reference capped at [`DENSE_CAP`] tokens.

use std::collections::{HashMap, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::doc_model::{HierPos, LinearDoc, LEVELS};

/// Largest `n` for which an `n x n` dense mask is materialized.
pub const DENSE_CAP: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MaskError {
    #[error("dense mask of size {n} exceeds the cap of {DENSE_CAP}")]
    DenseCapExceeded { n: usize },
    #[error("mask sizes differ: {0:?}")]
    ShapeMismatch(Vec<usize>),
    #[error("level masks need {LEVELS}-level positions, got {0}")]
    NotThreeLevel(usize),
    #[error("parent of node {node} is {parent}, outside 0..{n}")]
    ParentOutOfRange { node: usize, parent: usize, n: usize },
    #[error("parent array has {0} roots, expected exactly one")]
    RootCount(usize),
    #[error("parent array contains a cycle through node {0}")]
    Cycle(usize),
    #[error("mask is disconnected: no path from {from} to {to}")]
    DisconnectedMask { from: usize, to: usize },
    #[error("edge ({0}, {1}) outside an {2}-token mask")]
    EdgeOutOfRange(usize, usize, usize),
}

/// Row-major `n x n` boolean matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseMask {
    n: usize,
    bits: Vec<bool>,
}

impl DenseMask {
    pub fn new(n: usize) -> Result<Self, MaskError> {
        if n > DENSE_CAP {
            return Err(MaskError::DenseCapExceeded { n });
        }
        Ok(Self { n, bits: vec![false; n * n] })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self, MaskError> {
        let mut m = Self::new(n)?;
        for i in 0..n {
            for j in 0..n {
                m.bits[i * n + j] = f(i, j);
            }
        }
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.bits[i * self.n + j] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn to_sparse(&self) -> AttnMask {
        let rows = (0..self.n)
            .map(|i| (0..self.n).filter(|&j| self.get(i, j)).map(|j| j as u32).collect())
            .collect();
        AttnMask::from_sorted_rows(self.n, rows)
    }
}

/// Attention permissions in compressed sparse row form; columns sorted per row.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AttnMask {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
}

impl AttnMask {
    fn from_sorted_rows(n: usize, rows: Vec<Vec<u32>>) -> Self {
        debug_assert_eq!(rows.len(), n);
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut cols = Vec::with_capacity(rows.iter().map(Vec::len).sum());
        for row in rows {
            cols.extend_from_slice(&row);
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols }
    }

    /// Builds a mask from unsorted, possibly repeated `(query, key)` pairs.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, MaskError> {
        let mut rows = vec![Vec::new(); n];
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(MaskError::EdgeOutOfRange(i, j, n));
            }
            rows[i].push(j as u32);
        }
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
        }
        Ok(Self::from_sorted_rows(n, rows))
    }

    pub fn full(n: usize) -> Self {
        Self::from_sorted_rows(n, (0..n).map(|_| (0..n as u32).collect()).collect())
    }

    pub fn identity(n: usize) -> Self {
        Self::from_sorted_rows(n, (0..n as u32).map(|i| vec![i]).collect())
    }

    /// Concatenates masks along the diagonal, offsetting each block's indices.
    pub fn block_diagonal<'a>(masks: impl IntoIterator<Item = &'a AttnMask>) -> Self {
        let mut out = AttnMask { n: 0, row_ptr: vec![0], cols: Vec::new() };
        for m in masks {
            let off = out.n as u32;
            out.cols.extend(m.cols.iter().map(|&c| c + off));
            let base = *out.row_ptr.last().unwrap();
            out.row_ptr.extend(m.row_ptr[1..].iter().map(|&p| p + base));
            out.n += m.n;
        }
        out
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u32] {
        &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// Offset of row `i` inside the flat edge array.
    #[inline]
    pub fn row_start(&self, i: usize) -> usize {
        self.row_ptr[i]
    }

    #[inline]
    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.row(i).binary_search(&(j as u32)).is_ok()
    }

    /// Permitted pairs in row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).iter().map(move |&j| (i, j as usize)))
    }

    pub fn to_dense(&self) -> Result<DenseMask, MaskError> {
        let mut d = DenseMask::new(self.n)?;
        for (i, j) in self.edges() {
            d.set(i, j, true);
        }
        Ok(d)
    }

    pub fn transpose(&self) -> AttnMask {
        let mut rows = vec![Vec::new(); self.n];
        for (i, j) in self.edges() {
            rows[j].push(i as u32);
        }
        Self::from_sorted_rows(self.n, rows)
    }

    pub fn is_symmetric(&self) -> bool {
        self.edges().all(|(i, j)| self.allows(j, i))
    }

    pub fn has_full_diagonal(&self) -> bool {
        (0..self.n).all(|i| self.allows(i, i))
    }

    pub fn is_subset_of(&self, other: &AttnMask) -> bool {
        self.n == other.n && self.edges().all(|(i, j)| other.allows(i, j))
    }
}

/// Evaluates the OR of the three level predicates for one `(query, key)` pair.
#[inline]
pub fn doc_allows(q: &HierPos, k: &HierPos) -> bool {
    let [q1, q2, q3] = q.0;
    let [k1, k2, k3] = k.0;
    (q2 == 0 && k2 == 0) || (q3 == 0 && k3 == 0 && q1 == k1) || (q1 == k1 && q2 == k2)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelMasks {
    pub doc: DenseMask,
    pub sec: DenseMask,
    pub sent: DenseMask,
}

/// Per-level dense masks from a flat `levels`-wide position array.
pub fn level_masks_from_positions(flat: &[u32], levels: usize) -> Result<LevelMasks, MaskError> {
    if levels != LEVELS || flat.len() % LEVELS != 0 {
        return Err(MaskError::NotThreeLevel(levels));
    }
    let p: Vec<&[u32]> = flat.chunks_exact(LEVELS).collect();
    let n = p.len();
    Ok(LevelMasks {
        doc: DenseMask::from_fn(n, |i, j| p[i][1] == 0 && p[j][1] == 0)?,
        sec: DenseMask::from_fn(n, |i, j| p[i][2] == 0 && p[j][2] == 0 && p[i][0] == p[j][0])?,
        sent: DenseMask::from_fn(n, |i, j| p[i][0] == p[j][0] && p[i][1] == p[j][1])?,
    })
}

pub fn level_masks(doc: &LinearDoc) -> Result<LevelMasks, MaskError> {
    let flat: Vec<u32> = doc.positions().flat_map(|p| p.0).collect();
    level_masks_from_positions(&flat, LEVELS)
}

/// Elementwise OR of the three level masks.
pub fn combine(doc: &DenseMask, sec: &DenseMask, sent: &DenseMask) -> Result<AttnMask, MaskError> {
    if doc.n != sec.n || sec.n != sent.n {
        return Err(MaskError::ShapeMismatch(vec![doc.n, sec.n, sent.n]));
    }
    let mut out = doc.clone();
    for ((o, a), b) in out.bits.iter_mut().zip(&sec.bits).zip(&sent.bits) {
        *o |= *a || *b;
    }
    Ok(out.to_sparse())
}

/// Enumerates the document mask without touching the `n^2` grid.
///
/// Each row is the union of at most three groups, one per level predicate:
/// tokens sharing `(p1, p2)`; anchors (`p3 = 0`) sharing `p1`; and the
/// document-level anchors (`p2 = 0`).
pub fn sparse_pairs(doc: &LinearDoc) -> AttnMask {
    let pos: Vec<HierPos> = doc.positions().collect();
    let mut sent_groups: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
    let mut sec_groups: HashMap<u32, Vec<u32>> = HashMap::new();
    let mut doc_group = Vec::new();
    for (i, p) in pos.iter().enumerate() {
        let i = i as u32;
        sent_groups.entry((p.section(), p.sentence())).or_default().push(i);
        if p.token() == 0 {
            sec_groups.entry(p.section()).or_default().push(i);
        }
        if p.sentence() == 0 {
            doc_group.push(i);
        }
    }
    let rows = pos
        .iter()
        .map(|p| {
            let mut row = sent_groups[&(p.section(), p.sentence())].clone();
            if p.token() == 0 {
                row.extend_from_slice(&sec_groups[&p.section()]);
            }
            if p.sentence() == 0 {
                row.extend_from_slice(&doc_group);
            }
            row.sort_unstable();
            row.dedup();
            row
        })
        .collect();
    AttnMask::from_sorted_rows(pos.len(), rows)
}

/// Which tree edge families a [`tree_mask`] includes. Self-loops are always on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct EdgeToggle {
    /// Child as query attends its parent.
    pub up: bool,
    /// Parent as query attends its children.
    pub down: bool,
    /// Children of one parent attend each other.
    pub sibling: bool,
}

impl EdgeToggle {
    pub const ALL: EdgeToggle = EdgeToggle { up: true, down: true, sibling: true };
    pub const DOWN_SIBLING: EdgeToggle = EdgeToggle { up: false, down: true, sibling: true };
    pub const DOWN: EdgeToggle = EdgeToggle { up: false, down: true, sibling: false };
    pub const SELF_ONLY: EdgeToggle = EdgeToggle { up: false, down: false, sibling: false };

    pub const fn self_loop(&self) -> bool {
        true
    }
}

/// Checks a parent array describes one rooted tree; returns each node's depth.
pub fn tree_depths(parent: &[Option<usize>]) -> Result<Vec<u32>, MaskError> {
    let n = parent.len();
    let roots = parent.iter().filter(|p| p.is_none()).count();
    if roots != 1 {
        return Err(MaskError::RootCount(roots));
    }
    for (node, p) in parent.iter().enumerate() {
        if let Some(p) = *p {
            if p >= n {
                return Err(MaskError::ParentOutOfRange { node, parent: p, n });
            }
        }
    }
    const UNSET: u32 = u32::MAX;
    let mut depth = vec![UNSET; n];
    let mut path = Vec::new();
    for start in 0..n {
        let mut cur = start;
        while depth[cur] == UNSET {
            if path.len() > n {
                return Err(MaskError::Cycle(start));
            }
            path.push(cur);
            match parent[cur] {
                Some(p) => cur = p,
                None => {
                    depth[cur] = 0;
                    path.pop();
                    break;
                }
            }
        }
        let mut d = depth[cur];
        while let Some(node) = path.pop() {
            d += 1;
            depth[node] = d;
        }
    }
    Ok(depth)
}

/// Builds the mask of a rooted tree from its parent array.
pub fn tree_mask(parent: &[Option<usize>], toggles: EdgeToggle) -> Result<AttnMask, MaskError> {
    tree_depths(parent)?;
    let n = parent.len();
    let mut children: Vec<Vec<u32>> = vec![Vec::new(); n];
    for (i, p) in parent.iter().enumerate() {
        if let Some(p) = *p {
            children[p].push(i as u32);
        }
    }
    let rows = (0..n)
        .map(|i| {
            let mut row = vec![i as u32];
            if let Some(p) = parent[i] {
                if toggles.up {
                    row.push(p as u32);
                }
                if toggles.sibling {
                    row.extend_from_slice(&children[p]);
                }
            }
            if toggles.down {
                row.extend_from_slice(&children[i]);
            }
            row.sort_unstable();
            row.dedup();
            row
        })
        .collect();
    Ok(AttnMask::from_sorted_rows(n, rows))
}

/// Longest shortest directed path between any two tokens.
pub fn diameter(mask: &AttnMask) -> Result<usize, MaskError> {
    let n = mask.n();
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    let mut best = 0;
    for src in 0..n {
        dist.fill(usize::MAX);
        dist[src] = 0;
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            for &v in mask.row(u) {
                let v = v as usize;
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        if let Some(to) = dist.iter().position(|&d| d == usize::MAX) {
            return Err(MaskError::DisconnectedMask { from: src, to });
        }
        best = best.max(*dist.iter().max().unwrap_or(&0));
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaskStats {
    pub n: usize,
    pub nnz: usize,
    pub density: f64,
    pub row_min: usize,
    pub row_max: usize,
}

pub fn mask_stats(mask: &AttnMask) -> MaskStats {
    let n = mask.n();
    let lens = (0..n).map(|i| mask.row(i).len());
    MaskStats {
        n,
        nnz: mask.nnz(),
        density: if n == 0 { 0.0 } else { mask.nnz() as f64 / (n as f64 * n as f64) },
        row_min: lens.clone().min().unwrap_or(0),
        row_max: lens.max().unwrap_or(0),
    }
}
