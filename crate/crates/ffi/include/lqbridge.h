#ifndef LQBRIDGE_H
#define LQBRIDGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LqbStatus {
  LQB_STATUS_OK = 0,
  LQB_STATUS_NULL_POINTER = 1,
  LQB_STATUS_INVALID_ARGUMENT = 2,
  LQB_STATUS_DIMENSION = 3,
  /**
   * Integration failure, loss of controllability, truncation and the like.
   */
  LQB_STATUS_NUMERICAL = 4,
  LQB_STATUS_CONFIG = 5,
  LQB_STATUS_IO = 6,
  LQB_STATUS_PANIC = 7,
} LqbStatus;

/**
 * Opaque kernel handle for one pair of times.
 */
typedef struct LqbKernel LqbKernel;

/**
 * Opaque system handle.
 */
typedef struct LqbSystem LqbSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on the calling thread, or null if none.
 * The pointer stays valid until the next failing call on this thread or
 * [`lqb_clear_error`].
 */
const char *lqb_last_error_message(void);

void lqb_clear_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lqb_version(void);

/**
 * Builds a system from its JSON definition.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string and `out` a writable pointer.
 * On success `*out` owns a handle to release with [`lqb_system_free`].
 */
enum LqbStatus lqb_system_from_json(const char *json, struct LqbSystem **out);

/**
 * `(A, B, Q) = (0, I, 0)` in `n` dimensions on `[t0, t1]`.
 *
 * # Safety
 * `out` must be a writable pointer; release the handle with [`lqb_system_free`].
 */
enum LqbStatus lqb_system_heat(size_t n, double t0, double t1, struct LqbSystem **out);

/**
 * `(A, B, Q) = (0, I, 2 diag(d))` on `[t0, t1]`.
 *
 * # Safety
 * `d` must point to `n` readable doubles and `out` must be writable; release
 * the handle with [`lqb_system_free`].
 */
enum LqbStatus lqb_system_diagonal(const double *d,
                                   size_t n,
                                   double t0,
                                   double t1,
                                   struct LqbSystem **out);

/**
 * State and input dimensions.
 *
 * # Safety
 * `system` must be a live handle; `n` and `m` must be writable.
 */
enum LqbStatus lqb_system_dimensions(const struct LqbSystem *system, size_t *n, size_t *m);

/**
 * Controllability and killing-sign report as a JSON string.
 *
 * # Safety
 * `system` must be a live handle and `out` writable. On success `*out` is a
 * NUL-terminated string to release with [`lqb_string_free`].
 */
enum LqbStatus lqb_system_check_json(const struct LqbSystem *system, double tol, char **out);

/**
 * # Safety
 * `system` must be null or a handle from this library that has not been freed.
 */
void lqb_system_free(struct LqbSystem *system);

/**
 * Assembles the kernel from `t0` to `t` (`t0 < t`, both inside the horizon).
 *
 * # Safety
 * `system` must be a live handle and `out` writable; release the kernel with
 * [`lqb_kernel_free`]. The kernel does not borrow the system.
 */
enum LqbStatus lqb_kernel_new(const struct LqbSystem *system,
                              double t0,
                              double t,
                              struct LqbKernel **out);

/**
 * `κ(t0, x, t, y)`.
 *
 * # Safety
 * `kernel` must be a live handle, `x` and `y` must point to `n` readable
 * doubles each, and `out` must be writable.
 */
enum LqbStatus lqb_kernel_eval(const struct LqbKernel *kernel,
                               const double *x,
                               const double *y,
                               size_t n,
                               double *out);

/**
 * `ln κ(t0, x, t, y)`, finite where `κ` itself underflows.
 *
 * # Safety
 * As for [`lqb_kernel_eval`].
 */
enum LqbStatus lqb_kernel_log_eval(const struct LqbKernel *kernel,
                                   const double *x,
                                   const double *y,
                                   size_t n,
                                   double *out);

/**
 * Optimal control cost from `x` at `t0` to `y` at `t`, i.e. `½ dist²(x, y)`.
 *
 * # Safety
 * As for [`lqb_kernel_eval`].
 */
enum LqbStatus lqb_kernel_half_squared_distance(const struct LqbKernel *kernel,
                                                const double *x,
                                                const double *y,
                                                size_t n,
                                                double *out);

/**
 * The factor `c(t, t0)` in front of the Gaussian.
 *
 * # Safety
 * `kernel` must be a live handle and `out` writable.
 */
enum LqbStatus lqb_kernel_normalizer(const struct LqbKernel *kernel, double *out);

/**
 * Writes the `2n × 2n` distance matrix `[M11 M12; M12ᵀ M22]` row-major.
 *
 * # Safety
 * `kernel` must be a live handle and `out` must point to `len` writable
 * doubles; `len` must equal `4n²`.
 */
enum LqbStatus lqb_kernel_distance_matrix(const struct LqbKernel *kernel, double *out, size_t len);

/**
 * # Safety
 * `kernel` must be null or a handle from this library that has not been freed.
 */
void lqb_kernel_free(struct LqbKernel *kernel);

/**
 * # Safety
 * `s` must be null or a string returned by this library that has not been freed.
 */
void lqb_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LQBRIDGE_H */
