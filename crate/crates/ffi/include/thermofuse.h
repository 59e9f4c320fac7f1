#ifndef THERMOFUSE_H
#define THERMOFUSE_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Call status. Anything other than `Ok` leaves a message retrievable through
 * `tf_last_error_message`.
 */
typedef enum TfStatus {
  TF_STATUS_OK = 0,
  /**
   * A pointer argument was null or a size argument inconsistent.
   */
  TF_STATUS_INVALID_ARGUMENT = 1,
  /**
   * File missing or unreadable.
   */
  TF_STATUS_IO = 2,
  /**
   * The computation itself failed (shape mismatch, undefined metric, ...).
   */
  TF_STATUS_FAILED = 3,
  /**
   * A panic was caught at the boundary.
   */
  TF_STATUS_INTERNAL = 4,
} TfStatus;

/**
 * Opaque fusion engine: a loaded checkpoint (generator parameters, model
 * configuration and normalization constants).
 */
typedef struct TfEngine TfEngine;

/**
 * Evaluation results of `tf_evaluate`; all values in degrees Celsius based
 * units. `psnr` is `INFINITY` for an exact match.
 */
typedef struct TfMetrics {
  double rmse;
  double ssim;
  double psnr;
  double sam;
  double cc;
  double ergas;
  double ms_ssim;
} TfMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *tf_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tf_version(void);

/**
 * Load a checkpoint file into a new engine. On success `*out` owns the
 * engine; release it with `tf_engine_free`.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum TfStatus tf_engine_load(const char *path, struct TfEngine **out);

/**
 * Release an engine created by `tf_engine_load`. A null pointer is ignored.
 *
 * # Safety
 * `engine` must be null or a pointer returned by `tf_engine_load` that has
 * not been freed yet.
 */
void tf_engine_free(struct TfEngine *engine);

/**
 * Side length (pixels) of the fine-grid patches the engine consumes.
 *
 * # Safety
 * `engine` must be a live engine pointer.
 */
uintptr_t tf_engine_patch_size(const struct TfEngine *engine);

/**
 * One fused patch. Buffer layout (row-major, channel-major):
 *
 * * `fine_indices` — `3 * s * s` index values in `[-1, 1]` (NDVI, NDBI, NDWI)
 *   on the fine grid at the reference date,
 * * `mid_indices` — `3 * (s/3) * (s/3)` index values on the mid grid,
 * * `mid_lst` — `(s/3) * (s/3)` Kelvin values on the mid grid,
 * * `coarse_lst_t1`, `coarse_lst_t2` — `s * s` Kelvin values of the coarse
 *   observation resampled onto the fine patch grid,
 * * `out` — `s * s` Kelvin values, written on success,
 *
 * where `s = tf_engine_patch_size(engine)`.
 *
 * # Safety
 * All pointers must reference buffers of the documented lengths.
 */
enum TfStatus tf_engine_infer_patch(const struct TfEngine *engine,
                                    const float *fine_indices,
                                    const float *mid_indices,
                                    const float *mid_lst,
                                    const float *coarse_lst_t1,
                                    const float *coarse_lst_t2,
                                    float *out);

/**
 * Evaluate a fine-grid Kelvin prediction against a mid-grid Kelvin reference
 * (the reference covers the same extent with pixels three times larger). The
 * prediction is pooled with 3x3 block means and both inputs are converted to
 * Celsius before the metrics are computed.
 *
 * # Safety
 * `pred` must hold `height * width` values, `reference`
 * `(height/3) * (width/3)` values, and `out` must be a valid pointer.
 */
enum TfStatus tf_evaluate(const float *pred,
                          uintptr_t height,
                          uintptr_t width,
                          const float *reference,
                          struct TfMetrics *out);

/**
 * Non-overlapping 3x3 block means of a fine Kelvin map; `out` receives
 * `(height/3) * (width/3)` values.
 *
 * # Safety
 * `input` must hold `height * width` values and `out` the pooled count.
 */
enum TfStatus tf_pool3(const float *input, uintptr_t height, uintptr_t width, float *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* THERMOFUSE_H */
