#ifndef HDT_H
#define HDT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Tree-mask edge families for [`hdt_mask_from_tree`].
 */
#define HDT_EDGE_UP 1

#define HDT_EDGE_DOWN 2

#define HDT_EDGE_SIBLING 4

typedef enum HdtStatus {
  HDT_STATUS_OK = 0,
  HDT_STATUS_NULL_POINTER = 1,
  HDT_STATUS_INVALID_ARGUMENT = 2,
  HDT_STATUS_PARSE = 3,
  HDT_STATUS_BUFFER_TOO_SMALL = 4,
  HDT_STATUS_NUMERIC = 5,
  HDT_STATUS_INTERNAL = 6,
} HdtStatus;

/**
 * A linearized document.
 */
typedef struct HdtDoc HdtDoc;

/**
 * A sparse attention mask in row form.
 */
typedef struct HdtMask HdtMask;

/**
 * Tile counts of one document under sorted and original key order.
 */
typedef struct HdtSkipReport {
  size_t n;
  size_t s_max;
  size_t total_blocks;
  size_t sorted_nonempty;
  size_t unsorted_nonempty;
  double sorted_skip_ratio;
  double unsorted_skip_ratio;
} HdtSkipReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread. Valid until the next failure.
 */
const char *hdt_last_error(void);

/**
 * Library version, a static string.
 */
const char *hdt_version(void);

/**
 * Parses one document written as nested JSON arrays, `[[[tok,...],...],...]`.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum HdtStatus hdt_doc_parse(const char *json, struct HdtDoc **out);

/**
 * Builds a document from flat token ids. `sentence_lens[i]` tokens form
 * sentence `i`; `section_sizes[j]` consecutive sentences form section `j`.
 *
 * # Safety
 * Each pointer must reference at least its stated number of elements.
 */
enum HdtStatus hdt_doc_from_tokens(const uint32_t *tokens,
                                   size_t n_tokens,
                                   const size_t *sentence_lens,
                                   size_t n_sentences,
                                   const size_t *section_sizes,
                                   size_t n_sections,
                                   struct HdtDoc **out);

/**
 * # Safety
 * `doc` must come from this library and not be freed twice. Null is ignored.
 */
void hdt_doc_free(struct HdtDoc *doc);

/**
 * Linearized length including anchor tokens; 0 for a null handle.
 *
 * # Safety
 * `doc` must be a live handle or null.
 */
size_t hdt_doc_len(const struct HdtDoc *doc);

/**
 * Writes the `(section, sentence, token)` index of every token, `3 * len` values.
 *
 * # Safety
 * `out` must hold `out_len` values.
 */
enum HdtStatus hdt_doc_positions(const struct HdtDoc *doc, uint32_t *out, size_t out_len);

/**
 * Hierarchical positional encoding of one position with `levels` indices.
 * `base <= 0` selects the default of 10000.
 *
 * # Safety
 * `pos` holds `levels` values and `out` holds `d_model` values.
 */
enum HdtStatus hdt_hpe_encode(const uint32_t *pos,
                              size_t levels,
                              size_t d_model,
                              double base,
                              double *out);

/**
 * Encodings of every token of a document, `len x d_model` row-major.
 *
 * # Safety
 * `out` must hold `out_len` values.
 */
enum HdtStatus hdt_hpe_encode_doc(const struct HdtDoc *doc,
                                  size_t d_model,
                                  double *out,
                                  size_t out_len);

/**
 * The document's hierarchical attention mask.
 *
 * # Safety
 * `doc` must be live; `out` must be writable.
 */
enum HdtStatus hdt_mask_from_doc(const struct HdtDoc *doc, struct HdtMask **out);

/**
 * Mask of a rooted tree given as a parent array (`-1` marks the root).
 * `edges` is a bit set of `HDT_EDGE_UP`, `HDT_EDGE_DOWN`, `HDT_EDGE_SIBLING`;
 * self-attention is always included.
 *
 * # Safety
 * `parent` holds `n` values; `out` must be writable.
 */
enum HdtStatus hdt_mask_from_tree(const int64_t *parent,
                                  size_t n,
                                  uint32_t edges,
                                  struct HdtMask **out);

/**
 * # Safety
 * `mask` must come from this library and not be freed twice. Null is ignored.
 */
void hdt_mask_free(struct HdtMask *mask);

/**
 * # Safety
 * `mask` must be a live handle or null.
 */
size_t hdt_mask_len(const struct HdtMask *mask);

/**
 * Number of permitted (query, key) pairs.
 *
 * # Safety
 * `mask` must be a live handle or null.
 */
size_t hdt_mask_nnz(const struct HdtMask *mask);

/**
 * Writes all permitted pairs in row-major order into `rows` and `cols`.
 *
 * # Safety
 * `rows` and `cols` must each hold `cap` values.
 */
enum HdtStatus hdt_mask_edges(const struct HdtMask *mask,
                              uint32_t *rows,
                              uint32_t *cols,
                              size_t cap);

/**
 * Exact hierarchical attention of one head with the block-tiled kernel.
 * `q`, `k`, `v` and `out` are `len x d_k` row-major; zero block sizes pick the defaults.
 *
 * # Safety
 * All buffers must hold `len * d_k` values.
 */
enum HdtStatus hdt_attention_tiled(const struct HdtDoc *doc,
                                   const double *q,
                                   const double *k,
                                   const double *v,
                                   size_t d_k,
                                   size_t bq,
                                   size_t bk,
                                   double *out);

/**
 * Single-precision [`hdt_attention_tiled`].
 *
 * # Safety
 * All buffers must hold `len * d_k` values.
 */
enum HdtStatus hdt_attention_tiled_f32(const struct HdtDoc *doc,
                                       const float *q,
                                       const float *k,
                                       const float *v,
                                       size_t d_k,
                                       size_t bq,
                                       size_t bk,
                                       float *out);

/**
 * # Safety
 * `doc` must be live; `out` must be writable.
 */
enum HdtStatus hdt_skip_report(const struct HdtDoc *doc,
                               size_t bq,
                               size_t bk,
                               size_t d_k,
                               struct HdtSkipReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HDT_H */
