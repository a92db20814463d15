#ifndef GPR_FFI_H
#define GPR_FFI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Zero is success.
 */
typedef enum GprStatus {
  GPR_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  GPR_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  GPR_STATUS_INVALID_UTF8 = 2,
  /**
   * A file could not be read or parsed.
   */
  GPR_STATUS_IO = 3,
  /**
   * Arguments were rejected (bad spans, unknown pronoun, ...).
   */
  GPR_STATUS_INVALID_INPUT = 4,
  /**
   * The model failed to load or run.
   */
  GPR_STATUS_MODEL = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  GPR_STATUS_PANIC = 6,
} GprStatus;

/**
 * Model kind reported by [`gpr_model_kind`].
 */
typedef enum GprModelKind {
  GPR_MODEL_KIND_PROBERT = 0,
  GPR_MODEL_KIND_GREP = 1,
} GprModelKind;

/**
 * A loaded checkpoint together with its vocabulary.
 */
typedef struct GprModel GprModel;

/**
 * A sample to classify. Offsets count characters, as in GAP files.
 */
typedef struct GprSample {
  const char *id;
  const char *text;
  const char *pronoun;
  size_t pronoun_offset;
  const char *a;
  size_t a_offset;
  const char *b;
  size_t b_offset;
} GprSample;

/**
 * One provider's cluster: `n` mentions as parallel offset/length arrays.
 */
typedef struct GprCluster {
  const char *provider;
  const size_t *offsets;
  const size_t *lengths;
  size_t n;
} GprCluster;

/**
 * Headline GAP metrics.
 */
typedef struct GprScore {
  double f1_masculine;
  double f1_feminine;
  double bias;
  double f1_overall;
  double logloss;
  size_t missing;
} GprScore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *gpr_version(void);

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next call on this thread.
 */
const char *gpr_last_error(void);

/**
 * Load a checkpoint written by `gpr train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum GprStatus gpr_model_load(const char *path, struct GprModel **out);

/**
 * Release a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`gpr_model_load`] and not be used afterwards.
 */
void gpr_model_free(struct GprModel *model);

/**
 * Whether the model is the baseline or the evidence-pooling classifier.
 *
 * # Safety
 * `model` must be a live handle; `out` a valid pointer.
 */
enum GprStatus gpr_model_kind(const struct GprModel *model, enum GprModelKind *out);

/**
 * Class probabilities (A, B, NEITHER) for one sample. `clusters` may be
 * null when `n_clusters` is zero.
 *
 * # Safety
 * All pointers must be valid; `out_probs` must hold three doubles.
 */
enum GprStatus gpr_model_predict(const struct GprModel *model,
                                 const struct GprSample *sample,
                                 const struct GprCluster *clusters,
                                 size_t n_clusters,
                                 double *out_probs);

/**
 * Attention trace for one sample as a JSON string, to be released with
 * [`gpr_string_free`].
 *
 * # Safety
 * As for [`gpr_model_predict`]; `out_json` must be a valid pointer.
 */
enum GprStatus gpr_model_trace_json(const struct GprModel *model,
                                    const struct GprSample *sample,
                                    const struct GprCluster *clusters,
                                    size_t n_clusters,
                                    char **out_json);

/**
 * Release a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void gpr_string_free(char *s);

/**
 * Score a predictions CSV (`ID,A,B,NEITHER`) against a GAP TSV.
 *
 * # Safety
 * Paths must be NUL-terminated strings; `out` a valid pointer.
 */
enum GprStatus gpr_score_files(const char *pred_csv, const char *gold_tsv, struct GprScore *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GPR_FFI_H */
