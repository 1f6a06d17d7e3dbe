#ifndef MAR_FFI_H
#define MAR_FFI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of an FFI call.
 */
typedef enum MarStatus {
  MAR_STATUS_OK = 0,
  /**
   * A required pointer was null.
   */
  MAR_STATUS_NULL_POINTER = 1,
  /**
   * A buffer length does not match the geometry.
   */
  MAR_STATUS_BAD_LENGTH = 2,
  /**
   * Invalid geometry, configuration or argument.
   */
  MAR_STATUS_INVALID_ARGUMENT = 3,
  /**
   * Malformed or inconsistent data.
   */
  MAR_STATUS_DATA = 4,
  /**
   * File could not be read or written.
   */
  MAR_STATUS_IO = 5,
  /**
   * Non-finite values appeared during computation.
   */
  MAR_STATUS_DIVERGENCE = 6,
  /**
   * Internal error; the library caught a panic.
   */
  MAR_STATUS_INTERNAL = 7,
} MarStatus;

/**
 * Scan geometry with its precomputed projector.
 */
typedef struct MarGeometry MarGeometry;

/**
 * Trained model together with the geometry it was trained on.
 */
typedef struct MarModel MarModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The string stays
 * valid until the next failing call on the same thread.
 */
const char *mar_last_error(void);

/**
 * Desk-scale geometry for an `n x n` grid of 1 mm pixels.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum MarStatus mar_geometry_new_toy(uintptr_t n, struct MarGeometry **out);

/**
 * Release a geometry handle. Null is ignored.
 *
 * # Safety
 * `g` must come from [`mar_geometry_new_toy`] and not have been freed.
 */
void mar_geometry_free(struct MarGeometry *g);

/**
 * Image rows and columns, sinogram views and bins. Null outputs are skipped.
 *
 * # Safety
 * `g` must be a live handle; non-null outputs must be writable.
 */
enum MarStatus mar_geometry_dims(const struct MarGeometry *g,
                                 uintptr_t *height,
                                 uintptr_t *width,
                                 uintptr_t *num_views,
                                 uintptr_t *num_bins);

/**
 * Line integrals of an attenuation image (mm^-1).
 *
 * # Safety
 * `g` must be a live handle and the buffers must hold the given lengths.
 */
enum MarStatus mar_forward_project(const struct MarGeometry *g,
                                   const double *mu,
                                   uintptr_t mu_len,
                                   double *sino_out,
                                   uintptr_t sino_len_out);

/**
 * Filtered backprojection; the output is attenuation in mm^-1.
 *
 * # Safety
 * `g` must be a live handle and the buffers must hold the given lengths.
 */
enum MarStatus mar_fbp(const struct MarGeometry *g,
                       const double *sino,
                       uintptr_t sino_len_in,
                       double *mu_out,
                       uintptr_t mu_len);

/**
 * Detector bins whose rays cross a metal pixel.
 *
 * # Safety
 * `g` must be a live handle and the buffers must hold the given lengths.
 */
enum MarStatus mar_metal_trace(const struct MarGeometry *g,
                               const uint8_t *mask,
                               uintptr_t mask_len,
                               uint8_t *trace_out,
                               uintptr_t trace_len);

/**
 * Replace the traced bins of each view by linear interpolation between the
 * nearest untraced neighbours.
 *
 * # Safety
 * `g` must be a live handle and the buffers must hold the given lengths.
 */
enum MarStatus mar_li_complete(const struct MarGeometry *g,
                               const double *sino,
                               const uint8_t *trace,
                               uintptr_t len,
                               double *sino_out,
                               uintptr_t out_len);

/**
 * Load a trained checkpoint.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` writable.
 */
enum MarStatus mar_model_load(const char *path, struct MarModel **out);

/**
 * Release a model handle. Null is ignored.
 *
 * # Safety
 * `m` must come from [`mar_model_load`] and not have been freed.
 */
void mar_model_free(struct MarModel *m);

/**
 * New handle for the geometry the model was trained on.
 *
 * # Safety
 * `m` must be a live handle and `out` writable.
 */
enum MarStatus mar_model_geometry(const struct MarModel *m, struct MarGeometry **out);

/**
 * Correct a metal-corrupted sinogram: segment metal above `threshold_hu`,
 * build its trace, complete it with the model and reconstruct. Writes the
 * corrected image in HU, and the metal mask when `mask_out` is non-null.
 *
 * # Safety
 * `m` must be a live handle and the buffers must hold the given lengths.
 */
enum MarStatus mar_model_correct(const struct MarModel *m,
                                 const double *sino,
                                 uintptr_t sino_len_in,
                                 double threshold_hu,
                                 double *image_out,
                                 uintptr_t image_len_out,
                                 uint8_t *mask_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MAR_FFI_H */
