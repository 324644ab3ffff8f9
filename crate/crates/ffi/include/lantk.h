#ifndef LANTK_H
#define LANTK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LantkStatus {
  LANTK_STATUS_OK = 0,
  LANTK_STATUS_INVALID_INPUT = 1,
  LANTK_STATUS_DEGENERATE_GEOMETRY = 2,
  LANTK_STATUS_NUMERICAL = 3,
  LANTK_STATUS_UNSUPPORTED = 4,
  LANTK_STATUS_EMPTY_BUCKET = 5,
  LANTK_STATUS_GUARDRAIL = 6,
  LANTK_STATUS_IO = 7,
  LANTK_STATUS_NULL_POINTER = 8,
  LANTK_STATUS_PANIC = 9,
} LantkStatus;

/**
 * Dense row-major matrix of f64.
 */
typedef struct LantkMatrix LantkMatrix;

/**
 * Fitted kernel ridge regressor.
 */
typedef struct LantkRegressor LantkRegressor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *lantk_last_error(void);

const char *lantk_version(void);

/**
 * Copy `rows * cols` row-major values into a new matrix.
 *
 * # Safety
 * `data` must point to `rows * cols` readable values; `out` must be writable.
 */
enum LantkStatus lantk_matrix_new(size_t rows,
                                  size_t cols,
                                  const double *data,
                                  struct LantkMatrix **out);

/**
 * # Safety
 * `m` must come from this library and not be freed twice. Null is a no-op.
 */
void lantk_matrix_free(struct LantkMatrix *m);

/**
 * # Safety
 * `m` must be a live handle or null (returns 0).
 */
size_t lantk_matrix_rows(const struct LantkMatrix *m);

/**
 * # Safety
 * `m` must be a live handle or null (returns 0).
 */
size_t lantk_matrix_cols(const struct LantkMatrix *m);

/**
 * Copy the matrix row-major into `buf`, which holds `len` values.
 *
 * # Safety
 * `buf` must be writable for `len` values.
 */
enum LantkStatus lantk_matrix_copy(const struct LantkMatrix *m, double *buf, size_t len);

/**
 * # Safety
 * `m` must be a live handle, `out` writable.
 */
enum LantkStatus lantk_matrix_get(const struct LantkMatrix *m, size_t row, size_t col, double *out);

/**
 * Write in the LANTKMAT binary format.
 *
 * # Safety
 * `path` must be a NUL-terminated string.
 */
enum LantkStatus lantk_matrix_save(const struct LantkMatrix *m, const char *path);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` writable.
 */
enum LantkStatus lantk_matrix_load(const char *path, struct LantkMatrix **out);

/**
 * Expected ReLU tangent kernel of two `d`-vectors.
 *
 * # Safety
 * `x`, `x2` must hold `d` values; `out` writable.
 */
enum LantkStatus lantk_expected_k2(const double *x, const double *x2, size_t d, double *out);

/**
 * Train matrix over the rows of `x`.
 *
 * # Safety
 * `x` must be a live handle; `out` writable.
 */
enum LantkStatus lantk_expected_k2_matrix(const struct LantkMatrix *x, struct LantkMatrix **out);

/**
 * Cross-kernel between the rows of `a` and of `b`.
 *
 * # Safety
 * `a`, `b` must be live handles; `out` writable.
 */
enum LantkStatus lantk_expected_k2_cross(const struct LantkMatrix *a,
                                         const struct LantkMatrix *b,
                                         struct LantkMatrix **out);

/**
 * Width-independent coefficient of the expected fourth-order kernel
 * (divide by the width for the finite-width value), with its Monte-Carlo
 * standard error.
 *
 * # Safety
 * The four inputs must hold `d` values; `value` and `stderr` writable.
 */
enum LantkStatus lantk_expected_k4(const double *xa,
                                   const double *xb,
                                   const double *xc,
                                   const double *xd,
                                   size_t d,
                                   size_t samples,
                                   uint64_t seed,
                                   double *value,
                                   double *stderr);

/**
 * h_t of the kernel gradient flow from h0; `out` receives n values.
 * `t` may be +infinity for a positive definite `h`.
 *
 * # Safety
 * `h` live n×n handle; `y`, `h0` hold n values; `out` writable for n values.
 */
enum LantkStatus lantk_flow_solution(const struct LantkMatrix *h,
                                     const double *y,
                                     const double *h0,
                                     size_t n,
                                     double t,
                                     double *out);

/**
 * Finite-t kernel from the truncated hierarchy. `k3` holds n values;
 * `k4` and `h` are n×n; `floor_rel` is the relative eigenvalue floor.
 *
 * # Safety
 * Handles live; `k3`, `y` hold n values; `out` writable.
 */
enum LantkStatus lantk_prop1_kernel(double k2,
                                    const double *k3,
                                    const struct LantkMatrix *k4,
                                    const struct LantkMatrix *h,
                                    const double *y,
                                    size_t n,
                                    double t,
                                    double floor_rel,
                                    double *out);

/**
 * Kernel ridge regression. `targets` is n×c; a negative `ridge` selects
 * the default 1e-6·trace(K)/n.
 *
 * # Safety
 * Handles live; `out` writable.
 */
enum LantkStatus lantk_regressor_fit(const struct LantkMatrix *k,
                                     const struct LantkMatrix *targets,
                                     double ridge,
                                     struct LantkRegressor **out);

/**
 * Scores for a test×train cross-kernel.
 *
 * # Safety
 * Handles live; `out` writable.
 */
enum LantkStatus lantk_regressor_predict(const struct LantkRegressor *r,
                                         const struct LantkMatrix *k_cross,
                                         struct LantkMatrix **out);

/**
 * # Safety
 * `r` must come from this library and not be freed twice. Null is a no-op.
 */
void lantk_regressor_free(struct LantkRegressor *r);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LANTK_H */
