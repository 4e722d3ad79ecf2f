#ifndef STEAL_H
#define STEAL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum StealStatus {
  STEAL_STATUS_OK = 0,
  STEAL_STATUS_NULL_POINTER = 1,
  STEAL_STATUS_INVALID_ARGUMENT = 2,
  STEAL_STATUS_CONFIG = 3,
  STEAL_STATUS_DATA = 4,
  STEAL_STATUS_NUMERIC = 5,
  STEAL_STATUS_PANIC = 6,
} StealStatus;

// Autoencoder handle.
typedef struct StealModel StealModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *steal_version(void);

// Copies the last error message of this thread into `buf` (truncated,
// always NUL-terminated when `cap > 0`). Returns the full message length
// without the terminator, or 0 when there is no error.
//
// # Safety
// `buf` must point to `cap` writable bytes or be null.
uintptr_t steal_last_error_message(char *buf, uintptr_t cap);

// Freshly initialized model of a named preset (`"desk"` or `"paper"`).
//
// # Safety
// `preset` must be a NUL-terminated string; `out` must be writable.
enum StealStatus steal_model_new(const char *preset, uint64_t seed, struct StealModel **out);

// Loads the model stored in a checkpoint file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum StealStatus steal_model_load(const char *path, struct StealModel **out);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must come from this library and not be used afterwards.
void steal_model_free(struct StealModel *model);

// Writes the clip shape `[T, C, H, W]` into `out`.
//
// # Safety
// `model` must be a live handle and `out` must hold 4 values.
enum StealStatus steal_model_input_shape(const struct StealModel *model, uintptr_t *out);

// Number of learnable parameters, or 0 for a null handle.
//
// # Safety
// `model` must be a live handle or null.
uintptr_t steal_model_param_count(const struct StealModel *model);

// Reconstructs one `T×C×H×W` clip with values in `[-1, 1]`.
//
// # Safety
// `clip` and `out` must each hold `len` floats.
enum StealStatus steal_model_reconstruct(const struct StealModel *model,
                                         const float *clip,
                                         uintptr_t len,
                                         float *out);

// PSNR (dB) of the clip's scored frame (`T / 2`) against its reconstruction.
//
// # Safety
// `clip` must hold `len` floats; `out_psnr` must be writable.
enum StealStatus steal_model_score_clip(const struct StealModel *model,
                                        const float *clip,
                                        uintptr_t len,
                                        double *out_psnr);

// PSNR (dB) between two frames of `len` values in `[-1, 1]`.
//
// # Safety
// `original` and `reconstruction` must hold `len` floats.
enum StealStatus steal_psnr(const float *original,
                            const float *reconstruction,
                            uintptr_t len,
                            double peak,
                            double eps,
                            double *out);

// Min-max normalizes `values` into `out` (constant input maps to 0.5).
//
// # Safety
// `values` and `out` must each hold `len` doubles.
enum StealStatus steal_minmax_normalize(const double *values, uintptr_t len, double *out);

// Frame-level ROC AUC; labels are 0 (normal) or nonzero (anomalous).
//
// # Safety
// `scores` and `labels` must each hold `len` values.
enum StealStatus steal_roc_auc(const double *scores,
                               const uint8_t *labels,
                               uintptr_t len,
                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STEAL_H */
