#ifndef SLICEGS_H
#define SLICEGS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum SgStatus {
  SG_STATUS_OK = 0,
  SG_STATUS_NULL_POINTER = 1,
  SG_STATUS_INVALID_ARGUMENT = 2,
  SG_STATUS_IO = 3,
  SG_STATUS_FORMAT = 4,
  SG_STATUS_INVALID_CONFIG = 5,
  SG_STATUS_TRAINING = 6,
  SG_STATUS_CONTRACT = 7,
  SG_STATUS_DEGENERATE = 8,
  SG_STATUS_BUFFER_TOO_SMALL = 9,
  SG_STATUS_PANIC = 10,
} SgStatus;

/**
 * A Gaussian cloud.
 */
typedef struct SgCloud SgCloud;

/**
 * A voxel volume with intensities in `[0, 1]`.
 */
typedef struct SgVolume SgVolume;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *sg_last_error_message(void);

/**
 * Release a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void sg_string_free(char *s);

/**
 * Load an IGV1 volume.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SgStatus sg_volume_load(const char *path, struct SgVolume **out);

/**
 * Save a volume as IGV1.
 *
 * # Safety
 * `volume` must be a live handle; `path` a NUL-terminated string.
 */
enum SgStatus sg_volume_save(const struct SgVolume *volume, const char *path);

/**
 * Synthesize a phantom. `kind`: 0 nested ellipsoids, 1 checker shells.
 *
 * # Safety
 * `out` must be writable.
 */
enum SgStatus sg_phantom_create(uint32_t kind,
                                size_t nx,
                                size_t ny,
                                size_t nz,
                                uint64_t seed,
                                struct SgVolume **out);

/**
 * Write the volume's `[nx, ny, nz]` into `dims`.
 *
 * # Safety
 * `volume` must be a live handle; `dims` must point to 3 writable `size_t`.
 */
enum SgStatus sg_volume_dims(const struct SgVolume *volume, size_t *dims);

/**
 * Copy the voxels (x fastest) into `out`, which holds `len` floats.
 *
 * # Safety
 * `volume` must be a live handle; `out` must hold `len` writable floats.
 */
enum SgStatus sg_volume_read(const struct SgVolume *volume, float *out, size_t len);

/**
 * # Safety
 * `volume` must be null or a handle not yet freed.
 */
void sg_volume_free(struct SgVolume *volume);

/**
 * `resolution^3` Gaussians on a regular grid covering the volume.
 *
 * # Safety
 * `volume` must be a live handle; `out` must be writable.
 */
enum SgStatus sg_cloud_init_grid(const struct SgVolume *volume,
                                 size_t resolution,
                                 struct SgCloud **out);

/**
 * Load an IGS1 checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SgStatus sg_cloud_load(const char *path, struct SgCloud **out);

/**
 * Save as IGS1 plus a `.json` sidecar.
 *
 * # Safety
 * `cloud` must be a live handle; `path` a NUL-terminated string.
 */
enum SgStatus sg_cloud_save(const struct SgCloud *cloud, const char *path);

/**
 * # Safety
 * `cloud` must be a live handle; `count` must be writable.
 */
enum SgStatus sg_cloud_count(const struct SgCloud *cloud, size_t *count);

/**
 * # Safety
 * `cloud` must be null or a handle not yet freed.
 */
void sg_cloud_free(struct SgCloud *cloud);

/**
 * Render a `width x height` slice at depth `t` along `axis` (0 x, 1 y,
 * 2 z) into `out` (row-major, `len >= width * height`). Pixel `(i, j)` is
 * centered at `bounds.min + 0.5 + (i, j)` in the in-plane axes. `method`:
 * 1 fixed cube, 2 conditional box.
 *
 * # Safety
 * `cloud` must be a live handle; `out` must hold `len` writable floats.
 */
enum SgStatus sg_render_slice(const struct SgCloud *cloud,
                              uint32_t axis,
                              double t,
                              size_t width,
                              size_t height,
                              uint32_t method,
                              double epsilon,
                              float *out,
                              size_t len);

/**
 * Slice `volume` along all three axes, hold out `test_fraction` of each
 * axis, and train a fresh grid cloud. `config_json` (nullable) holds any
 * training options as JSON; its `seed` also drives the split. On success
 * `out_cloud` receives the trained cloud and `out_report` the training
 * report as JSON.
 *
 * # Safety
 * Pointers must be valid as documented; `config_json` may be null.
 */
enum SgStatus sg_train(const struct SgVolume *volume,
                       const char *config_json,
                       double test_fraction,
                       struct SgCloud **out_cloud,
                       char **out_report);

/**
 * Run the candidate-selection benchmark. `config_json` may be null for
 * defaults. The report is returned as JSON in `out_report`.
 *
 * # Safety
 * `config_json` must be null or NUL-terminated; `out_report` writable.
 */
enum SgStatus sg_simulate(const char *config_json, char **out_report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SLICEGS_H */
