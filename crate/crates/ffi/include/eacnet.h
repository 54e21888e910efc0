#ifndef EACNET_H
#define EACNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EacStatus {
  EAC_STATUS_OK = 0,
  EAC_STATUS_NULL_POINTER = 1,
  EAC_STATUS_INVALID_ARGUMENT = 2,
  EAC_STATUS_IO = 3,
  EAC_STATUS_FORMAT = 4,
  EAC_STATUS_SHAPE = 5,
  EAC_STATUS_RUNTIME = 6,
  EAC_STATUS_PANIC = 7,
} EacStatus;

/**
 * Opaque network handle.
 */
typedef struct EacModel EacModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the next failing call.
 */
const char *eac_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *eac_version(void);

/**
 * Side length of the square input images.
 */
size_t eac_input_size(void);

/**
 * Number of AU probabilities per sample.
 */
size_t eac_num_outputs(void);

/**
 * Loads a checkpoint into a new handle written to `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
 */
enum EacStatus eac_model_load(const char *path, struct EacModel **out);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `model` must come from [`eac_model_load`] and not be used afterwards.
 */
void eac_model_free(struct EacModel *model);

/**
 * Variant code: 0 FVGG, 1 E-Net, 2 EAC.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum EacStatus eac_model_variant(const struct EacModel *model, uint8_t *out);

/**
 * Width of the penultimate feature vector.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum EacStatus eac_model_feature_width(const struct EacModel *model, size_t *out);

/**
 * AU probabilities for `n` images.
 *
 * `images` holds `n·3·S·S` floats in `[0, 1]`, planar RGB, with `S` from
 * [`eac_input_size`]. `landmarks` holds `n·68` `(x, y)` pairs in pixels of a
 * `width×height` frame and may be null for FVGG models. `out` receives `n·12` values.
 *
 * # Safety
 * All pointers must be valid for the lengths above.
 */
enum EacStatus eac_model_forward(const struct EacModel *model,
                                 const float *images,
                                 size_t n,
                                 const double *landmarks,
                                 uint32_t width,
                                 uint32_t height,
                                 float *out);

/**
 * Penultimate features for `n` images; `out` receives `n·width` values where
 * `width` comes from [`eac_model_feature_width`]. Inputs as in [`eac_model_forward`].
 *
 * # Safety
 * All pointers must be valid for the stated lengths.
 */
enum EacStatus eac_model_features(const struct EacModel *model,
                                  const float *images,
                                  size_t n,
                                  const double *landmarks,
                                  uint32_t width,
                                  uint32_t height,
                                  float *out);

/**
 * The 100×100 attention map of one face, row-major, into `out`.
 *
 * # Safety
 * `points` must hold 68 `(x, y)` pairs and `out` room for 10000 doubles.
 */
enum EacStatus eac_attention_from_points(const double *points,
                                         uint32_t width,
                                         uint32_t height,
                                         double *out);

/**
 * The 20 AU centers of one face as `(x, y)` pairs on the 100×100 grid.
 *
 * # Safety
 * `points` must hold 68 `(x, y)` pairs and `out` room for 40 doubles.
 */
enum EacStatus eac_au_centers(const double *points, uint32_t width, uint32_t height, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EACNET_H */
