#ifndef MODGAP_H
#define MODGAP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define MODGAP_MODALITY_VISUAL 0

#define MODGAP_MODALITY_TEXT 1

#define MODGAP_FORMAT_JSONL 0

#define MODGAP_FORMAT_BINARY 1

#define MODGAP_COLLAPSE_CENTRALIZE 0

#define MODGAP_COLLAPSE_DELETE 1

#define MODGAP_NOISE_COSINE 0

#define MODGAP_NOISE_GAUSSIAN 1

typedef enum ModgapStatus {
  MODGAP_STATUS_OK = 0,
  MODGAP_STATUS_NULL_POINTER = 1,
  MODGAP_STATUS_DIMENSION = 2,
  MODGAP_STATUS_DEGENERATE_VECTOR = 3,
  MODGAP_STATUS_PARALLEL_VECTOR = 4,
  MODGAP_STATUS_EMPTY_BANK = 5,
  MODGAP_STATUS_TASK_MISMATCH = 6,
  MODGAP_STATUS_PARAMETER = 7,
  MODGAP_STATUS_TRANSFORM_KIND = 8,
  MODGAP_STATUS_FORMAT = 9,
  MODGAP_STATUS_DIVERGENCE = 10,
  MODGAP_STATUS_CONFIG = 11,
  MODGAP_STATUS_IO = 12,
  MODGAP_STATUS_UTF8 = 13,
  MODGAP_STATUS_PANIC = 14,
} ModgapStatus;

/**
 * Opaque embedding bank.
 */
typedef struct ModgapBank ModgapBank;

/**
 * Opaque fitted collapse transform.
 */
typedef struct ModgapTransform ModgapTransform;

/**
 * Scalar part of a gap report.
 */
typedef struct ModgapGapSummary {
  size_t dim;
  double gap_norm;
  double matched_pair_mean_cosine;
  double retrieval_top1_v2t;
  double retrieval_top1_t2v;
} ModgapGapSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call into this library.
 */
const char *modgap_last_error_message(void);

/**
 * Creates an empty bank.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage.
 */
enum ModgapStatus modgap_bank_new(uint32_t modality_code, size_t dim, struct ModgapBank **out);

/**
 * Appends one row with task id `task_id`.
 *
 * # Safety
 * `bank` must come from this library; `task_id` must be NUL-terminated;
 * `values` must point to `len` doubles.
 */
enum ModgapStatus modgap_bank_push(struct ModgapBank *bank,
                                   const char *task_id,
                                   const double *values,
                                   size_t len);

/**
 * Reads a bank from disk.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum ModgapStatus modgap_bank_load(const char *path, uint32_t format_code, struct ModgapBank **out);

/**
 * Writes a bank to disk.
 *
 * # Safety
 * `bank` must come from this library; `path` must be NUL-terminated.
 */
enum ModgapStatus modgap_bank_save(const struct ModgapBank *bank,
                                   const char *path,
                                   uint32_t format_code);

/**
 * Number of rows, or 0 for a null handle.
 *
 * # Safety
 * `bank` must be null or come from this library.
 */
size_t modgap_bank_len(const struct ModgapBank *bank);

/**
 * Row dimension, or 0 for a null handle.
 *
 * # Safety
 * `bank` must be null or come from this library.
 */
size_t modgap_bank_dim(const struct ModgapBank *bank);

/**
 * # Safety
 * `bank` must come from this library; `out` must be writable.
 */
enum ModgapStatus modgap_bank_modality(const struct ModgapBank *bank, uint32_t *out);

/**
 * Copies row `index` into `out`, which must hold exactly `dim` doubles.
 *
 * # Safety
 * `bank` must come from this library; `out` must point to `len` doubles.
 */
enum ModgapStatus modgap_bank_row(const struct ModgapBank *bank,
                                  size_t index,
                                  double *out,
                                  size_t len);

/**
 * # Safety
 * `bank` must be null or come from this library, and not be used again.
 */
void modgap_bank_free(struct ModgapBank *bank);

/**
 * Cosine similarity of two vectors of length `len`.
 *
 * # Safety
 * `a` and `b` must point to `len` doubles; `out` must be writable.
 */
enum ModgapStatus modgap_cosine_similarity(const double *a,
                                           const double *b,
                                           size_t len,
                                           double *out);

/**
 * Gap statistics of a visual/text bank pair.
 *
 * # Safety
 * Both banks must come from this library; `out` must be writable.
 */
enum ModgapStatus modgap_gap_report(const struct ModgapBank *bank_v,
                                    const struct ModgapBank *bank_l,
                                    struct ModgapGapSummary *out);

/**
 * Fits a collapse transform on reference banks. `k` is ignored for
 * centralize.
 *
 * # Safety
 * Both banks must come from this library; `out` must be writable.
 */
enum ModgapStatus modgap_transform_fit(uint32_t kind,
                                       const struct ModgapBank *reference_v,
                                       const struct ModgapBank *reference_l,
                                       size_t k,
                                       struct ModgapTransform **out);

/**
 * Width of the transform's output.
 *
 * # Safety
 * `transform` must be null or come from this library.
 */
size_t modgap_transform_output_dim(const struct ModgapTransform *transform);

/**
 * Applies the transform to one vector. `out` must hold exactly
 * `modgap_transform_output_dim(transform)` doubles.
 *
 * # Safety
 * `values` must point to `len` doubles and `out` to `out_len` doubles.
 */
enum ModgapStatus modgap_transform_apply(const struct ModgapTransform *transform,
                                         const double *values,
                                         size_t len,
                                         uint32_t modality_code,
                                         double *out,
                                         size_t out_len);

/**
 * Applies the transform to every row of a bank, producing a new bank.
 *
 * # Safety
 * `transform` and `bank` must come from this library; `out` must be writable.
 */
enum ModgapStatus modgap_transform_apply_bank(const struct ModgapTransform *transform,
                                              const struct ModgapBank *bank,
                                              struct ModgapBank **out);

/**
 * Serializes the transform; release the string with [`modgap_string_free`].
 *
 * # Safety
 * `transform` must come from this library; `out` must be writable.
 */
enum ModgapStatus modgap_transform_to_json(const struct ModgapTransform *transform, char **out);

/**
 * # Safety
 * `json` must be NUL-terminated; `out` must be writable.
 */
enum ModgapStatus modgap_transform_from_json(const char *json, struct ModgapTransform **out);

/**
 * # Safety
 * `transform` must be null or come from this library, and not be used again.
 */
void modgap_transform_free(struct ModgapTransform *transform);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void modgap_string_free(char *s);

/**
 * Corrupts every row of `bank`. `strength` is alpha for cosine noise and the
 * standard deviation for Gaussian noise.
 *
 * # Safety
 * `bank` must come from this library; `out` must be writable.
 */
enum ModgapStatus modgap_corrupt_bank(const struct ModgapBank *bank,
                                      uint32_t kind,
                                      double strength,
                                      uint64_t seed,
                                      struct ModgapBank **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MODGAP_H */
