#ifndef AU3D_H
#define AU3D_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum Au3dStatus {
  AU3D_STATUS_OK = 0,
  AU3D_STATUS_NULL_POINTER = 1,
  AU3D_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Malformed input data: degenerate landmarks, corrupt checkpoint bytes.
   */
  AU3D_STATUS_DATA_ERROR = 3,
  /**
   * A non-finite value appeared during computation.
   */
  AU3D_STATUS_NUMERICAL_ERROR = 4,
  AU3D_STATUS_BUFFER_TOO_SMALL = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  AU3D_STATUS_PANIC = 6,
} Au3dStatus;

typedef enum Au3dVariant {
  AU3D_VARIANT_BINARY = 0,
  AU3D_VARIANT_THREE_CLASS = 1,
} Au3dVariant;

/**
 * Opaque occupancy grid.
 */
typedef struct Au3dGrid Au3dGrid;

/**
 * Opaque trained or freshly initialized network.
 */
typedef struct Au3dNetwork Au3dNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *au3d_version(void);

/**
 * Copy the calling thread's last error message (NUL-terminated) into `buf`.
 * Returns the buffer size needed, including the NUL; the message is
 * truncated when `cap` is smaller. An empty message means no error.
 *
 * # Safety
 * `buf` must be null or valid for `cap` bytes.
 */
size_t au3d_last_error(char *buf, size_t cap);

/**
 * Encode `n_points` landmarks (`xyz` holds `3 * n_points` doubles, x y z per
 * point) into a `c x c x c` grid.
 *
 * # Safety
 * `xyz` must be valid for `3 * n_points` reads; `out` must be writable.
 */
enum Au3dStatus au3d_grid_encode(const double *xyz,
                                 size_t n_points,
                                 size_t c,
                                 struct Au3dGrid **out);

/**
 * Parse a grid from its byte export.
 *
 * # Safety
 * `bytes` must be valid for `len` reads; `out` must be writable.
 */
enum Au3dStatus au3d_grid_from_bytes(const uint8_t *bytes, size_t len, struct Au3dGrid **out);

/**
 * # Safety
 * `grid` must come from this library; `side` must be writable.
 */
enum Au3dStatus au3d_grid_side(const struct Au3dGrid *grid, size_t *side);

/**
 * Occupancy of cell `(x, y, z)` as 0 or 1.
 *
 * # Safety
 * `grid` must come from this library; `value` must be writable.
 */
enum Au3dStatus au3d_grid_get(const struct Au3dGrid *grid,
                              size_t x,
                              size_t y,
                              size_t z,
                              uint8_t *value);

/**
 * Number of occupied cells.
 *
 * # Safety
 * `grid` must come from this library; `count` must be writable.
 */
enum Au3dStatus au3d_grid_count(const struct Au3dGrid *grid, size_t *count);

/**
 * Byte export of the grid (two-call protocol).
 *
 * # Safety
 * `grid` must come from this library; `buf` null or valid for `cap` bytes.
 */
enum Au3dStatus au3d_grid_to_bytes(const struct Au3dGrid *grid,
                                   uint8_t *buf,
                                   size_t cap,
                                   size_t *len_out);

/**
 * # Safety
 * `grid` must be null or come from this library, and not be used afterwards.
 */
void au3d_grid_free(struct Au3dGrid *grid);

/**
 * Default architecture for `variant` (an [`Au3dVariant`] value) at grid side
 * `c`, initialized from `seed`.
 *
 * # Safety
 * `out` must be writable.
 */
enum Au3dStatus au3d_network_new(uint32_t variant,
                                 size_t c,
                                 size_t au_count,
                                 uint64_t seed,
                                 struct Au3dNetwork **out);

/**
 * Load a checkpoint.
 *
 * # Safety
 * `bytes` must be valid for `len` reads; `out` must be writable.
 */
enum Au3dStatus au3d_network_load(const uint8_t *bytes, size_t len, struct Au3dNetwork **out);

/**
 * Checkpoint bytes of the network (two-call protocol).
 *
 * # Safety
 * `net` must come from this library; `buf` null or valid for `cap` bytes.
 */
enum Au3dStatus au3d_network_save(const struct Au3dNetwork *net,
                                  uint8_t *buf,
                                  size_t cap,
                                  size_t *len_out);

/**
 * Outputs per frame: the AU count for binary networks, three per AU otherwise.
 *
 * # Safety
 * `net` must come from this library; `len` must be writable.
 */
enum Au3dStatus au3d_network_output_len(const struct Au3dNetwork *net, size_t *len);

/**
 * Probabilities for `n` grids, written frame-major into `out`, which must
 * hold `n * output_len` doubles.
 *
 * # Safety
 * `grids` must hold `n` grid handles; `out` must be valid for `out_len` writes.
 */
enum Au3dStatus au3d_network_predict(const struct Au3dNetwork *net,
                                     const struct Au3dGrid *const *grids,
                                     size_t n,
                                     double *out,
                                     size_t out_len);

/**
 * # Safety
 * `net` must be null or come from this library, and not be used afterwards.
 */
void au3d_network_free(struct Au3dNetwork *net);

/**
 * `2 tp / (2 tp + fp + fn)`, or 0 when the denominator is 0.
 */
double au3d_f1_frame(uint64_t tp, uint64_t fp, uint64_t fn_, uint64_t tn);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AU3D_H */
