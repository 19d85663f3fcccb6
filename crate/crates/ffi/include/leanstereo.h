#ifndef LEANSTEREO_H
#define LEANSTEREO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LsStatus {
  LS_STATUS_OK = 0,
  LS_STATUS_NULL_POINTER = 1,
  LS_STATUS_INVALID_ARGUMENT = 2,
  LS_STATUS_SHAPE = 3,
  LS_STATUS_CONFIG = 4,
  LS_STATUS_IO = 5,
  LS_STATUS_FORMAT = 6,
  LS_STATUS_DATASET = 7,
  LS_STATUS_CHECKPOINT = 8,
  LS_STATUS_DEVICE = 9,
  LS_STATUS_EMPTY_MASK = 10,
  LS_STATUS_CONTRACT = 11,
  LS_STATUS_PANIC = 12,
} LsStatus;

/**
 * Opaque network handle.
 */
typedef struct LsModel LsModel;

typedef struct LsMetrics {
  double epe;
  double d1;
  double px3;
  double px2;
  double px1;
  uint64_t valid_count;
} LsMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy of the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t ls_last_error_message(char *buf, size_t len);

/**
 * New randomly initialized network from a preset (`default`, `desk`, `kitti`).
 *
 * # Safety
 * `preset` must be a NUL-terminated string; `out` must be writable.
 */
enum LsStatus ls_model_new(const char *preset, uint64_t seed, struct LsModel **out);

/**
 * Network restored from a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum LsStatus ls_model_load(const char *path, struct LsModel **out);

/**
 * # Safety
 * `model` must come from this library; `path` must be a NUL-terminated string.
 */
enum LsStatus ls_model_save(const struct LsModel *model, const char *path);

/**
 * # Safety
 * `model` must be null or a handle from this library not yet freed.
 */
void ls_model_free(struct LsModel *model);

/**
 * # Safety
 * `model` must come from this library; `out` must be writable.
 */
enum LsStatus ls_model_param_count(const struct LsModel *model, uint64_t *out);

/**
 * # Safety
 * `model` must come from this library; `out` must be writable.
 */
enum LsStatus ls_model_max_disparity(const struct LsModel *model, uint32_t *out);

/**
 * Inference MACs for one `height x width` pair (multiples of 32).
 *
 * # Safety
 * `model` must come from this library; `out` must be writable.
 */
enum LsStatus ls_model_macs(const struct LsModel *model,
                            uint32_t height,
                            uint32_t width,
                            uint64_t *out);

/**
 * Disparity of the left view, any size; written to `disparity[H*W]`.
 *
 * # Safety
 * `left` and `right` must hold `3*H*W` floats, `disparity` `H*W`.
 */
enum LsStatus ls_model_infer(const struct LsModel *model,
                             const float *left,
                             const float *right,
                             uint32_t height,
                             uint32_t width,
                             float *disparity);

/**
 * Metrics over pixels that are valid (`valid` may be null for all) and
 * have ground truth in `(0, max_disparity)`.
 *
 * # Safety
 * `pred` and `gt` must hold `H*W` floats; `valid` null or `H*W` bytes.
 */
enum LsStatus ls_metrics(const float *pred,
                         const float *gt,
                         const uint8_t *valid,
                         uint32_t height,
                         uint32_t width,
                         float max_disparity,
                         struct LsMetrics *out);

/**
 * Read a single-channel PFM. The buffer of `H*W` floats is owned by the
 * caller and released with [`ls_buffer_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string; the out pointers writable.
 */
enum LsStatus ls_pfm_read(const char *path, float **data, uint32_t *height, uint32_t *width);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `data` must hold `H*W` floats.
 */
enum LsStatus ls_pfm_write(const char *path, const float *data, uint32_t height, uint32_t width);

/**
 * Release a buffer returned by this library; `len` is its element count.
 *
 * # Safety
 * `data` must be null or a buffer from this library of exactly `len` floats.
 */
void ls_buffer_free(float *data, size_t len);

/**
 * One synthetic pair into caller buffers: `left`/`right` `3*H*W`, `gt`
 * and `valid` `H*W`.
 *
 * # Safety
 * All output pointers must be valid for the sizes above.
 */
enum LsStatus ls_synth_generate(uint64_t seed,
                                uint32_t height,
                                uint32_t width,
                                uint32_t num_shapes,
                                uint32_t d_min,
                                uint32_t d_max,
                                float *left,
                                float *right,
                                float *gt,
                                uint8_t *valid);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LEANSTEREO_H */
