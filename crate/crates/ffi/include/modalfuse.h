#ifndef MODALFUSE_H
#define MODALFUSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum MmfStatus {
  MMF_STATUS_OK = 0,
  MMF_STATUS_NULL_POINTER = 1,
  MMF_STATUS_INVALID_ARGUMENT = 2,
  MMF_STATUS_IO = 3,
  MMF_STATUS_DATA = 4,
  MMF_STATUS_DIVERGENCE = 5,
  MMF_STATUS_PANIC = 6,
} MmfStatus;

// Loaded dataset manifest.
typedef struct MmfManifest MmfManifest;

// Loaded checkpoint (single model or ensemble).
typedef struct MmfModel MmfModel;

// Aggregate metrics of one evaluation.
typedef struct MmfMetrics {
  double accuracy;
  double macro_precision;
  double macro_recall;
  double macro_f1;
} MmfMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next call into this library on the same thread.
const char *mmf_last_error_message(void);

// Tempered inverse-frequency class weights `(max_count / count_c)^beta`.
//
// # Safety
// `counts` and `out_weights` must each point to `k` elements.
enum MmfStatus mmf_class_weights(const size_t *counts, size_t k, double beta, double *out_weights);

// Accuracy and macro precision/recall/F1 of `n` predictions over `k` classes.
//
// # Safety
// `preds` and `labels` must point to `n` elements; `out` must be writable.
enum MmfStatus mmf_evaluate(const size_t *preds,
                            const size_t *labels,
                            size_t n,
                            size_t k,
                            struct MmfMetrics *out);

// Loads a JSONL manifest for task `'A'` or `'B'`. Relative image paths
// resolve against the manifest's directory.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum MmfStatus mmf_manifest_load(const char *path, char task, struct MmfManifest **out);

// Number of samples, or 0 for a null handle.
//
// # Safety
// `manifest` must be null or a live handle.
size_t mmf_manifest_len(const struct MmfManifest *manifest);

// Stratified k-fold assignment; writes the fold of sample `i` to
// `out_folds[i]`.
//
// # Safety
// `manifest` must be a live handle; `out_folds` must hold
// `mmf_manifest_len(manifest)` elements.
enum MmfStatus mmf_manifest_kfold(const struct MmfManifest *manifest,
                                  size_t k,
                                  uint64_t seed,
                                  size_t *out_folds);

// # Safety
// `manifest` must be null or a handle not yet freed.
void mmf_manifest_free(struct MmfManifest *manifest);

// Loads a checkpoint file or an ensemble checkpoint directory.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum MmfStatus mmf_model_load(const char *path, struct MmfModel **out);

// Configuration number 1..=8 (M1..M8), or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
uint32_t mmf_model_config(const struct MmfModel *model);

// Number of output classes, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t mmf_model_num_classes(const struct MmfModel *model);

// Class probabilities for one sample. `image` holds 512 values and `text`
// 1024; either may be null when the configuration does not use it.
// `out_gate` (two values: image, text) may be null; for models without a
// gate it is left untouched.
//
// # Safety
// Non-null pointers must reference the sizes above; `out_probs` must hold
// `mmf_model_num_classes(model)` values.
enum MmfStatus mmf_model_predict_proba(const struct MmfModel *model,
                                       const float *image,
                                       const float *text,
                                       double *out_probs,
                                       double *out_gate);

// # Safety
// `model` must be null or a handle not yet freed.
void mmf_model_free(struct MmfModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MODALFUSE_H */
