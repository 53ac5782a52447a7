//! C interface.
//!
//! Documents and masks are opaque heap handles released with their `_free`
//! function. Every fallible call returns an [`HdtStatus`]; on failure
//! [`hdt_last_error`] holds a message for the calling thread. Matrices are
//! dense row-major buffers owned by the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use hdt_core::doc_model::{build_tree, linearize, parse_doc_line, LinearDoc};
use hdt_core::engine::{skip_report, tiled_forward, AttentionInput, DEFAULT_BK, DEFAULT_BQ};
use hdt_core::hpe::{encode_position, encode_sequence, EncodingConfig};
use hdt_core::mask::{sparse_pairs, tree_mask, AttnMask, EdgeToggle};
use hdt_core::Real;
use ndarray::Array2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HdtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    BufferTooSmall = 4,
    Numeric = 5,
    Internal = 6,
}

/// A linearized document.
pub struct HdtDoc {
    doc: LinearDoc,
}

/// A sparse attention mask in row form.
pub struct HdtMask {
    mask: AttnMask,
}

/// Tile counts of one document under sorted and original key order.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HdtSkipReport {
    pub n: usize,
    pub s_max: usize,
    pub total_blocks: usize,
    pub sorted_nonempty: usize,
    pub unsorted_nonempty: usize,
    pub sorted_skip_ratio: f64,
    pub unsorted_skip_ratio: f64,
}

/// Tree-mask edge families for [`hdt_mask_from_tree`].
pub const HDT_EDGE_UP: u32 = 1;
pub const HDT_EDGE_DOWN: u32 = 2;
pub const HDT_EDGE_SIBLING: u32 = 4;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl std::fmt::Display) {
    let text = msg.to_string().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

struct Fail(HdtStatus, String);

impl Fail {
    fn new(status: HdtStatus, msg: impl std::fmt::Display) -> Self {
        Fail(status, msg.to_string())
    }
}

impl From<hdt_core::engine::EngineError> for Fail {
    fn from(e: hdt_core::engine::EngineError) -> Self {
        let status = if e.is_numeric() { HdtStatus::Numeric } else { HdtStatus::InvalidArgument };
        Fail(status, e.to_string())
    }
}

fn invalid(e: impl std::fmt::Display) -> Fail {
    Fail::new(HdtStatus::InvalidArgument, e)
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HdtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HdtStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            HdtStatus::Internal
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail::new(HdtStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::new(HdtStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::new(HdtStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::new(HdtStatus::NullPointer, "output handle pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread. Valid until the next failure.
#[no_mangle]
pub extern "C" fn hdt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn hdt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses one document written as nested JSON arrays, `[[[tok,...],...],...]`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hdt_doc_parse(json: *const c_char, out: *mut *mut HdtDoc) -> HdtStatus {
    guard(|| {
        if json.is_null() {
            return Err(Fail::new(HdtStatus::NullPointer, "json is null"));
        }
        let text = CStr::from_ptr(json).to_str().map_err(|e| Fail::new(HdtStatus::Parse, e))?;
        let tree = parse_doc_line(text).map_err(|e| Fail::new(HdtStatus::Parse, e))?;
        put(out, HdtDoc { doc: linearize(&tree) })
    })
}

/// Builds a document from flat token ids. `sentence_lens[i]` tokens form
/// sentence `i`; `section_sizes[j]` consecutive sentences form section `j`.
///
/// # Safety
/// Each pointer must reference at least its stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn hdt_doc_from_tokens(
    tokens: *const u32,
    n_tokens: usize,
    sentence_lens: *const usize,
    n_sentences: usize,
    section_sizes: *const usize,
    n_sections: usize,
    out: *mut *mut HdtDoc,
) -> HdtStatus {
    guard(|| {
        let tokens = slice(tokens, n_tokens, "tokens")?;
        let lens = slice(sentence_lens, n_sentences, "sentence_lens")?;
        let sizes = slice(section_sizes, n_sections, "section_sizes")?;
        if lens.iter().sum::<usize>() != n_tokens || sizes.iter().sum::<usize>() != n_sentences {
            return Err(invalid("sentence and section sizes do not add up"));
        }
        let mut toks = tokens.iter().copied();
        let mut sentences = lens.iter().map(|&l| toks.by_ref().take(l).collect::<Vec<u32>>());
        let sections = sizes.iter().map(|&s| sentences.by_ref().take(s).collect()).collect();
        let tree = build_tree(sections).map_err(invalid)?;
        put(out, HdtDoc { doc: linearize(&tree) })
    })
}

/// # Safety
/// `doc` must come from this library and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn hdt_doc_free(doc: *mut HdtDoc) {
    if !doc.is_null() {
        drop(Box::from_raw(doc));
    }
}

/// Linearized length including anchor tokens; 0 for a null handle.
///
/// # Safety
/// `doc` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn hdt_doc_len(doc: *const HdtDoc) -> usize {
    doc.as_ref().map_or(0, |d| d.doc.len())
}

/// Writes the `(section, sentence, token)` index of every token, `3 * len` values.
///
/// # Safety
/// `out` must hold `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn hdt_doc_positions(doc: *const HdtDoc, out: *mut u32, out_len: usize) -> HdtStatus {
    guard(|| {
        let d = &deref(doc, "doc")?.doc;
        if out_len < 3 * d.len() {
            return Err(Fail::new(HdtStatus::BufferTooSmall, format!("need {} values", 3 * d.len())));
        }
        let out = slice_mut(out, out_len, "out")?;
        for (chunk, p) in out.chunks_mut(3).zip(d.positions()) {
            chunk.copy_from_slice(p.as_slice());
        }
        Ok(())
    })
}

/// Hierarchical positional encoding of one position with `levels` indices.
/// `base <= 0` selects the default of 10000.
///
/// # Safety
/// `pos` holds `levels` values and `out` holds `d_model` values.
#[no_mangle]
pub unsafe extern "C" fn hdt_hpe_encode(
    pos: *const u32,
    levels: usize,
    d_model: usize,
    base: f64,
    out: *mut f64,
) -> HdtStatus {
    guard(|| {
        let pos = slice(pos, levels, "pos")?;
        let cfg = if base > 0.0 {
            EncodingConfig::with_base(d_model, levels, base)
        } else {
            EncodingConfig::new(d_model, levels)
        }
        .map_err(invalid)?;
        let v: Vec<f64> = encode_position(pos, &cfg).map_err(invalid)?;
        slice_mut(out, d_model, "out")?.copy_from_slice(&v);
        Ok(())
    })
}

/// Encodings of every token of a document, `len x d_model` row-major.
///
/// # Safety
/// `out` must hold `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn hdt_hpe_encode_doc(doc: *const HdtDoc, d_model: usize, out: *mut f64, out_len: usize) -> HdtStatus {
    guard(|| {
        let d = &deref(doc, "doc")?.doc;
        let cfg = EncodingConfig::document(d_model).map_err(invalid)?;
        if out_len < d.len() * d_model {
            return Err(Fail::new(HdtStatus::BufferTooSmall, format!("need {} values", d.len() * d_model)));
        }
        let enc: Array2<f64> = encode_sequence(d, &cfg).map_err(invalid)?;
        slice_mut(out, out_len, "out")?[..enc.len()].copy_from_slice(enc.as_slice().expect("standard layout"));
        Ok(())
    })
}

/// The document's hierarchical attention mask.
///
/// # Safety
/// `doc` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hdt_mask_from_doc(doc: *const HdtDoc, out: *mut *mut HdtMask) -> HdtStatus {
    guard(|| {
        let d = &deref(doc, "doc")?.doc;
        put(out, HdtMask { mask: sparse_pairs(d) })
    })
}

/// Mask of a rooted tree given as a parent array (`-1` marks the root).
/// `edges` is a bit set of `HDT_EDGE_UP`, `HDT_EDGE_DOWN`, `HDT_EDGE_SIBLING`;
/// self-attention is always included.
///
/// # Safety
/// `parent` holds `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hdt_mask_from_tree(parent: *const i64, n: usize, edges: u32, out: *mut *mut HdtMask) -> HdtStatus {
    guard(|| {
        let raw = slice(parent, n, "parent")?;
        let parent: Vec<Option<usize>> = raw
            .iter()
            .map(|&p| match p {
                -1 => Ok(None),
                p if p >= 0 => Ok(Some(p as usize)),
                p => Err(invalid(format!("parent index {p}"))),
            })
            .collect::<Result<_, _>>()?;
        let toggles = EdgeToggle {
            up: edges & HDT_EDGE_UP != 0,
            down: edges & HDT_EDGE_DOWN != 0,
            sibling: edges & HDT_EDGE_SIBLING != 0,
        };
        put(out, HdtMask { mask: tree_mask(&parent, toggles).map_err(invalid)? })
    })
}

/// # Safety
/// `mask` must come from this library and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn hdt_mask_free(mask: *mut HdtMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// # Safety
/// `mask` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn hdt_mask_len(mask: *const HdtMask) -> usize {
    mask.as_ref().map_or(0, |m| m.mask.n())
}

/// Number of permitted (query, key) pairs.
///
/// # Safety
/// `mask` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn hdt_mask_nnz(mask: *const HdtMask) -> usize {
    mask.as_ref().map_or(0, |m| m.mask.nnz())
}

/// Writes all permitted pairs in row-major order into `rows` and `cols`.
///
/// # Safety
/// `rows` and `cols` must each hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn hdt_mask_edges(mask: *const HdtMask, rows: *mut u32, cols: *mut u32, cap: usize) -> HdtStatus {
    guard(|| {
        let m = &deref(mask, "mask")?.mask;
        if cap < m.nnz() {
            return Err(Fail::new(HdtStatus::BufferTooSmall, format!("need {} edges", m.nnz())));
        }
        let (rows, cols) = (slice_mut(rows, cap, "rows")?, slice_mut(cols, cap, "cols")?);
        for (e, (i, j)) in m.edges().enumerate() {
            rows[e] = i as u32;
            cols[e] = j as u32;
        }
        Ok(())
    })
}

unsafe fn attention<T: Real>(
    doc: *const HdtDoc,
    q: *const T,
    k: *const T,
    v: *const T,
    d_k: usize,
    bq: usize,
    bk: usize,
    out: *mut T,
) -> HdtStatus {
    guard(|| {
        let d = &deref(doc, "doc")?.doc;
        let len = d.len() * d_k;
        let load = |p: *const T, what: &str| -> Result<Array2<T>, Fail> {
            Array2::from_shape_vec((d.len(), d_k), slice(p, len, what)?.to_vec()).map_err(invalid)
        };
        let inp = AttentionInput::new(load(q, "q")?, load(k, "k")?, load(v, "v")?)?;
        let bq = if bq == 0 { DEFAULT_BQ } else { bq };
        let bk = if bk == 0 { DEFAULT_BK } else { bk };
        let res = tiled_forward(&inp, d, bq, bk)?;
        slice_mut(out, len, "out")?.copy_from_slice(res.as_slice().expect("standard layout"));
        Ok(())
    })
}

/// Exact hierarchical attention of one head with the block-tiled kernel.
/// `q`, `k`, `v` and `out` are `len x d_k` row-major; zero block sizes pick the defaults.
///
/// # Safety
/// All buffers must hold `len * d_k` values.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn hdt_attention_tiled(
    doc: *const HdtDoc,
    q: *const f64,
    k: *const f64,
    v: *const f64,
    d_k: usize,
    bq: usize,
    bk: usize,
    out: *mut f64,
) -> HdtStatus {
    attention(doc, q, k, v, d_k, bq, bk, out)
}

/// Single-precision [`hdt_attention_tiled`].
///
/// # Safety
/// All buffers must hold `len * d_k` values.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn hdt_attention_tiled_f32(
    doc: *const HdtDoc,
    q: *const f32,
    k: *const f32,
    v: *const f32,
    d_k: usize,
    bq: usize,
    bk: usize,
    out: *mut f32,
) -> HdtStatus {
    attention(doc, q, k, v, d_k, bq, bk, out)
}

/// # Safety
/// `doc` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hdt_skip_report(doc: *const HdtDoc, bq: usize, bk: usize, d_k: usize, out: *mut HdtSkipReport) -> HdtStatus {
    guard(|| {
        let d = &deref(doc, "doc")?.doc;
        let r = skip_report(d, bq, bk, d_k)?;
        let out = out.as_mut().ok_or_else(|| Fail::new(HdtStatus::NullPointer, "out is null"))?;
        *out = HdtSkipReport {
            n: r.n,
            s_max: r.s_max,
            total_blocks: r.total_blocks,
            sorted_nonempty: r.sorted.nonempty,
            unsorted_nonempty: r.unsorted.nonempty,
            sorted_skip_ratio: r.sorted.skip_ratio,
            unsorted_skip_ratio: r.unsorted.skip_ratio,
        };
        Ok(())
    })
}
