#ifndef INFLARE_H
#define INFLARE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define INFLARE_DIRECTION_INFLATE 0

#define INFLARE_DIRECTION_GENERATE 1

#define INFLARE_SOLVER_EULER 0

#define INFLARE_SOLVER_HEUN 1

typedef enum InflareStatus {
  INFLARE_STATUS_OK = 0,
  INFLARE_STATUS_NULL_POINTER = 1,
  INFLARE_STATUS_INVALID_ARGUMENT = 2,
  INFLARE_STATUS_DIMENSION_MISMATCH = 3,
  INFLARE_STATUS_NUMERICAL = 4,
  INFLARE_STATUS_IO = 5,
  INFLARE_STATUS_CHECKPOINT = 6,
  INFLARE_STATUS_PANIC = 7,
} InflareStatus;

/**
 * Opaque trained denoiser.
 */
typedef struct InflareModel InflareModel;

/**
 * Opaque inflation schedule.
 */
typedef struct InflareSchedule InflareSchedule;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread, or an empty
 * string after a success. Valid until the next call into this library.
 */
const char *inflare_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *inflare_version(void);

/**
 * Participation ratio `(sum v)^2 / sum v^2` of `len` nonnegative values.
 *
 * # Safety
 * `values` must point to `len` doubles and `out` to one writable double.
 */
enum InflareStatus inflare_participation_ratio(const double *values, size_t len, double *out);

/**
 * PR-preserving schedule with equal rates in `d` dimensions.
 *
 * # Safety
 * `out` must point to a writable handle slot.
 */
enum InflareStatus inflare_schedule_prp(size_t d,
                                        double rho,
                                        double t_max,
                                        struct InflareSchedule **out);

/**
 * PR-reducing schedule with per-dimension rates `g[0..d]`.
 *
 * # Safety
 * `g` must point to `d` doubles and `out` to a writable handle slot.
 */
enum InflareStatus inflare_schedule_prr(const double *g,
                                        size_t d,
                                        double rho,
                                        double t_max,
                                        struct InflareSchedule **out);

/**
 * # Safety
 * `s` must be null or a handle from this library not yet freed.
 */
void inflare_schedule_free(struct InflareSchedule *s);

/**
 * Dimension of the schedule, or 0 for a null handle.
 *
 * # Safety
 * `s` must be null or a live handle.
 */
size_t inflare_schedule_dim(const struct InflareSchedule *s);

/**
 * Integration horizon, or NaN for a null handle.
 *
 * # Safety
 * `s` must be null or a live handle.
 */
double inflare_schedule_t_max(const struct InflareSchedule *s);

/**
 * Noise variances `gamma(t)` into `out[0..len]`; `len` must equal the dimension.
 *
 * # Safety
 * `s` must be a live handle and `out` must point to `len` writable doubles.
 */
enum InflareStatus inflare_schedule_gamma(const struct InflareSchedule *s,
                                          double t,
                                          double *out,
                                          size_t len);

/**
 * Latent variances at `t_max` in whitened units into `out[0..len]`.
 *
 * # Safety
 * `s` must be a live handle and `out` must point to `len` writable doubles.
 */
enum InflareStatus inflare_schedule_latent_cov(const struct InflareSchedule *s,
                                               double *out,
                                               size_t len);

/**
 * Integrate `rows x cols` whitened points through the Gaussian oracle
 * field of `s` on a uniform grid with step `step`.
 *
 * # Safety
 * `x` and `out` must each point to `rows * cols` doubles; they may alias.
 */
enum InflareStatus inflare_oracle_flow(const struct InflareSchedule *s,
                                       const double *x,
                                       size_t rows,
                                       size_t cols,
                                       int32_t direction,
                                       int32_t solver,
                                       double step,
                                       double *out);

/**
 * Load an IFLOW1 checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable handle slot.
 */
enum InflareStatus inflare_model_load(const char *path, struct InflareModel **out);

/**
 * Save a model as an IFLOW1 checkpoint.
 *
 * # Safety
 * `m` must be a live handle and `path` a NUL-terminated string.
 */
enum InflareStatus inflare_model_save(const struct InflareModel *m, const char *path);

/**
 * Train a denoiser on whitened `rows x cols` data with default
 * hyperparameters except `steps`, `batch_size`, and `seed`.
 *
 * # Safety
 * `data` must point to `rows * cols` doubles, `s` must be a live handle,
 * and `out` a writable handle slot.
 */
enum InflareStatus inflare_model_train(const double *data,
                                       size_t rows,
                                       size_t cols,
                                       const struct InflareSchedule *s,
                                       size_t steps,
                                       size_t batch_size,
                                       uint64_t seed,
                                       struct InflareModel **out);

/**
 * # Safety
 * `m` must be null or a handle from this library not yet freed.
 */
void inflare_model_free(struct InflareModel *m);

/**
 * Data dimension, or 0 for a null handle.
 *
 * # Safety
 * `m` must be null or a live handle.
 */
size_t inflare_model_dim(const struct InflareModel *m);

/**
 * New schedule handle holding a copy of the model's schedule.
 *
 * # Safety
 * `m` must be a live handle and `out` a writable handle slot.
 */
enum InflareStatus inflare_model_schedule(const struct InflareModel *m,
                                          struct InflareSchedule **out);

/**
 * Denoiser output `D(x, t)` for whitened rows.
 *
 * # Safety
 * `x` and `out` must each point to `rows * cols` doubles; they may alias.
 */
enum InflareStatus inflare_model_denoise(const struct InflareModel *m,
                                         const double *x,
                                         size_t rows,
                                         size_t cols,
                                         double t,
                                         double *out);

/**
 * Integrate whitened rows through the model's flow on a uniform grid.
 *
 * # Safety
 * `x` and `out` must each point to `rows * cols` doubles; they may alias.
 */
enum InflareStatus inflare_model_flow(const struct InflareModel *m,
                                      const double *x,
                                      size_t rows,
                                      size_t cols,
                                      int32_t direction,
                                      int32_t solver,
                                      double step,
                                      double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INFLARE_H */
