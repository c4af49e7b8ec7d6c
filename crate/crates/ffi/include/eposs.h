#ifndef EPOSS_H
#define EPOSS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result codes.
 */
typedef enum EpossStatus {
  EPOSS_STATUS_OK = 0,
  EPOSS_STATUS_NULL_POINTER = 1,
  EPOSS_STATUS_INVALID_ARGUMENT = 2,
  EPOSS_STATUS_DATA_ERROR = 3,
  EPOSS_STATUS_NOT_ADMISSIBLE = 4,
  EPOSS_STATUS_BUFFER_TOO_SMALL = 5,
  EPOSS_STATUS_EMPTY_RESULT = 6,
  EPOSS_STATUS_PANIC = 7,
} EpossStatus;

/**
 * An admissible calibrator γ.
 */
typedef struct EpossCalibrator EpossCalibrator;

/**
 * A regularized Gaussian e-process.
 */
typedef struct EpossEProcess EpossEProcess;

/**
 * A normalized prior possibility contour on a grid.
 */
typedef struct EpossPrior EpossPrior;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `cap`). Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
uintptr_t eposs_last_error(char *buf, uintptr_t cap);

/**
 * Creates the beta-mixture calibrator with shape `kappa`.
 *
 * # Safety
 * `out` must be a valid pointer to write a handle into.
 */
enum EpossStatus eposs_calibrator_new(double kappa, struct EpossCalibrator **out);

/**
 * γ(u).
 *
 * # Safety
 * `cal` must be a live handle and `out` writable.
 */
enum EpossStatus eposs_calibrator_gamma(const struct EpossCalibrator *cal, double u, double *out);

/**
 * Releases a calibrator. Null is ignored.
 *
 * # Safety
 * `cal` must come from [`eposs_calibrator_new`] and not be used afterwards.
 */
void eposs_calibrator_free(struct EpossCalibrator *cal);

/**
 * Builds a named one-dimensional prior contour on `nodes` points of `[lower, upper]`.
 * `kind` is one of gaussian_surprise, mean_bound, event_bound, median_prior or vacuous.
 *
 * # Safety
 * `kind` must be a NUL-terminated string and `out` writable.
 */
enum EpossStatus eposs_prior_new(const char *kind,
                                 double k,
                                 double lower,
                                 double upper,
                                 uintptr_t nodes,
                                 struct EpossPrior **out);

/**
 * q(θ).
 *
 * # Safety
 * `prior` must be a live handle and `out` writable.
 */
enum EpossStatus eposs_prior_eval(const struct EpossPrior *prior, double theta, double *out);

/**
 * Releases a prior. Null is ignored.
 *
 * # Safety
 * `prior` must come from [`eposs_prior_new`] and not be used afterwards.
 */
void eposs_prior_free(struct EpossPrior *prior);

/**
 * Savage–Dickey Gaussian e-process with mixing variance `v`, regularized by
 * `prior` through `cal`. A null `prior` gives the unregularized process; a null
 * `cal` with a non-null prior uses the beta mixture with κ = 1.
 *
 * # Safety
 * `prior` and `cal` must be null or live handles; `out` writable.
 */
enum EpossStatus eposs_eprocess_new(double v,
                                    const struct EpossPrior *prior,
                                    const struct EpossCalibrator *cal,
                                    struct EpossEProcess **out);

/**
 * ln 𝔢^reg(z^n, θ) for the `len` observations at `data`.
 *
 * # Safety
 * `ep` must be a live handle, `data` valid for `len` doubles, `out` writable.
 */
enum EpossStatus eposs_eprocess_log_value(const struct EpossEProcess *ep,
                                          const double *data,
                                          uintptr_t len,
                                          double theta,
                                          double *out);

/**
 * Writes the IM contour π on `nodes` points of `[lower, upper]` into `out`
 * (capacity `cap`, at least `nodes`).
 *
 * # Safety
 * `ep` must be a live handle, `data` valid for `len` doubles, `out` valid for `cap` doubles.
 */
enum EpossStatus eposs_contour_values(const struct EpossEProcess *ep,
                                      const double *data,
                                      uintptr_t len,
                                      double lower,
                                      double upper,
                                      uintptr_t nodes,
                                      double *out,
                                      uintptr_t cap);

/**
 * Interval hull of the level-α confidence region on a grid.
 * Returns `EmptyResult` when no grid node is retained.
 *
 * # Safety
 * `ep` must be a live handle, `data` valid for `len` doubles, `lo`/`hi` writable.
 */
enum EpossStatus eposs_confidence_hull(const struct EpossEProcess *ep,
                                       const double *data,
                                       uintptr_t len,
                                       double alpha,
                                       double lower,
                                       double upper,
                                       uintptr_t nodes,
                                       double *lo,
                                       double *hi);

/**
 * Upper expected squared-error loss of action `a` under the IM contour on a grid.
 *
 * # Safety
 * `ep` must be a live handle, `data` valid for `len` doubles, `out` writable.
 */
enum EpossStatus eposs_upper_squared_loss(const struct EpossEProcess *ep,
                                          const double *data,
                                          uintptr_t len,
                                          double a,
                                          double lower,
                                          double upper,
                                          uintptr_t nodes,
                                          double *out);

/**
 * Releases an e-process. Null is ignored.
 *
 * # Safety
 * `ep` must come from [`eposs_eprocess_new`] and not be used afterwards.
 */
void eposs_eprocess_free(struct EpossEProcess *ep);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EPOSS_H */
