#ifndef BRANCHY_H
#define BRANCHY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BranchyStatus {
  BRANCHY_STATUS_OK = 0,
  /**
   * Bad configuration, unsupported call order, or invalid argument value.
   */
  BRANCHY_STATUS_USAGE_ERROR = 1,
  /**
   * Unreadable, malformed or incompatible input.
   */
  BRANCHY_STATUS_DATA_ERROR = 2,
  /**
   * Numerical failure.
   */
  BRANCHY_STATUS_NUMERICAL_ERROR = 3,
  BRANCHY_STATUS_NULL_ARGUMENT = 4,
  BRANCHY_STATUS_INVALID_UTF8 = 5,
  /**
   * The output buffer is too small; the needed size was reported.
   */
  BRANCHY_STATUS_BUFFER_TOO_SMALL = 6,
  BRANCHY_STATUS_PANIC = 7,
} BranchyStatus;

/**
 * Opaque model handle. Create with [`branchy_model_load`], release with
 * [`branchy_model_free`]. A handle may be shared across threads for reads.
 */
typedef struct BranchyModelHandle BranchyModelHandle;

/**
 * Outcome of one early-exit inference.
 */
typedef struct BranchyExitResult {
  /**
   * Predicted class index; see [`branchy_model_label_name`].
   */
  uint32_t prediction;
  /**
   * 1-based exit that produced the answer.
   */
  uint32_t chosen_exit;
  uint32_t layers_evaluated;
  /**
   * Probability of the predicted class at the chosen exit.
   */
  double confidence;
  /**
   * Entropy at the chosen exit.
   */
  double entropy;
  /**
   * Multiply-accumulates spent on this query.
   */
  uint64_t flops;
} BranchyExitResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a model file. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum BranchyStatus branchy_model_load(const char *path, struct BranchyModelHandle **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `handle` must come from [`branchy_model_load`] and not be used afterwards.
 */
void branchy_model_free(struct BranchyModelHandle *handle);

/**
 * # Safety
 * `handle` must be live; `out` writable.
 */
enum BranchyStatus branchy_model_num_exits(const struct BranchyModelHandle *handle, size_t *out);

/**
 * # Safety
 * `handle` must be live; `out` writable.
 */
enum BranchyStatus branchy_model_num_classes(const struct BranchyModelHandle *handle, size_t *out);

/**
 * Copies the calibrated entropy thresholds into `buf[0..len]`. `*count`
 * receives the number of exits; too small a buffer is `BUFFER_TOO_SMALL`.
 *
 * # Safety
 * `handle` must be live, `count` writable, `buf` valid for `len` doubles.
 */
enum BranchyStatus branchy_model_thresholds(const struct BranchyModelHandle *handle,
                                            double *buf,
                                            size_t len,
                                            size_t *count);

/**
 * Copies the name of class `index` as a NUL-terminated string.
 *
 * # Safety
 * `handle` must be live; `buf` valid for `len` bytes; `needed` may be null.
 */
enum BranchyStatus branchy_model_label_name(const struct BranchyModelHandle *handle,
                                            size_t index,
                                            char *buf,
                                            size_t len,
                                            size_t *needed);

/**
 * Tokenizes `utterance` with the model's vocabulary and runs early-exit
 * inference.
 *
 * # Safety
 * `handle` must be live, `utterance` NUL-terminated, `out` writable.
 */
enum BranchyStatus branchy_infer_text(const struct BranchyModelHandle *handle,
                                      const char *utterance,
                                      struct BranchyExitResult *out);

/**
 * Analytic cumulative FLOPs to reach exit `exit` (1-based) for sequences of
 * `seq_len` tokens (ignored by feed-forward models).
 *
 * # Safety
 * `handle` must be live; `out` writable.
 */
enum BranchyStatus branchy_model_exit_flops(const struct BranchyModelHandle *handle,
                                            size_t exit,
                                            size_t seq_len,
                                            uint64_t *out);

/**
 * Cumulative parameter count up to exit `exit` (1-based).
 *
 * # Safety
 * `handle` must be live; `out` writable.
 */
enum BranchyStatus branchy_model_exit_params(const struct BranchyModelHandle *handle,
                                             size_t exit,
                                             bool include_embedding,
                                             uint64_t *out);

/**
 * `Σ flops[n] · probs[n]` over `n` exits. `probs` must be non-negative and
 * sum to 1 within `tolerance` (about 1e-3 suits distributions printed to four decimals).
 *
 * # Safety
 * `flops` and `probs` must be valid for `n` doubles; `out` writable.
 */
enum BranchyStatus branchy_expected_complexity(const double *flops,
                                               const double *probs,
                                               size_t n,
                                               double tolerance,
                                               double *out);

/**
 * `(baseline − expected) / baseline`.
 *
 * # Safety
 * `out` must be writable.
 */
enum BranchyStatus branchy_relative_savings(double expected, double baseline, double *out);

/**
 * Copies this thread's last error message (NUL-terminated) into `buf` and
 * returns the size it needs, terminator included; 1 means no error. Pass a
 * null `buf` to query the size.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t branchy_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *branchy_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BRANCHY_H */
