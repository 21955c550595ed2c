#ifndef OLS_ATTENTION_H
#define OLS_ATTENTION_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OlsStatus {
  OLS_STATUS_OK = 0,
  OLS_STATUS_NULL_POINTER = 1,
  OLS_STATUS_DIMENSION_MISMATCH = 2,
  OLS_STATUS_RANK_DEFICIENT = 3,
  OLS_STATUS_NON_FINITE = 4,
  OLS_STATUS_NOT_CONVERGED = 5,
  OLS_STATUS_NOT_POSITIVE_DEFINITE = 6,
  OLS_STATUS_DIVERGED = 7,
  OLS_STATUS_ASSOCIATION_MISMATCH = 8,
  OLS_STATUS_INVALID_ARGUMENT = 9,
  OLS_STATUS_BUFFER_TOO_SMALL = 10,
  OLS_STATUS_PANIC = 11,
} OlsStatus;

typedef enum OlsShiftKind {
  OLS_SHIFT_KIND_SCALE = 0,
  OLS_SHIFT_KIND_ROTATE = 1,
  OLS_SHIFT_KIND_ANISOTROPIC = 2,
} OlsShiftKind;

/**
 * Opaque attention weights configured as least squares.
 */
typedef struct OlsConfig OlsConfig;

/**
 * Opaque dense matrix.
 */
typedef struct OlsMatrix OlsMatrix;

/**
 * Opaque training trace.
 */
typedef struct OlsTrace OlsTrace;

typedef struct OlsEquivalenceReport {
  size_t n;
  size_t k;
  double max_abs_diff;
  double rel_frobenius_diff;
  double whitening_residual;
} OlsEquivalenceReport;

typedef struct OlsTrainConfig {
  size_t n;
  double slope;
  double noise_var;
  uint64_t seed;
  double l0;
  size_t epochs;
  double lr;
  double beta1;
  double beta2;
  double eps;
  /**
   * Draw `x` from N(0, 1) instead of U[-1, 1].
   */
  bool gaussian_x;
  size_t record_every;
} OlsTrainConfig;

typedef struct OlsEpochRecord {
  size_t epoch;
  double mse;
  double rel_dist_to_ols;
  double l_value;
} OlsEpochRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *ols_last_error_message(void);

/**
 * Copies `rows * cols` values from `data` into a new matrix.
 *
 * # Safety
 * `data` must point to `rows * cols` readable doubles; `out` must be writable.
 */
enum OlsStatus ols_matrix_new(size_t rows, size_t cols, const double *data, struct OlsMatrix **out);

/**
 * # Safety
 * `m` must be NULL or a handle from this library not yet freed.
 */
void ols_matrix_free(struct OlsMatrix *m);

/**
 * Row count, or 0 for NULL.
 *
 * # Safety
 * `m` must be NULL or a live handle.
 */
size_t ols_matrix_rows(const struct OlsMatrix *m);

/**
 * Column count, or 0 for NULL.
 *
 * # Safety
 * `m` must be NULL or a live handle.
 */
size_t ols_matrix_cols(const struct OlsMatrix *m);

/**
 * Copies the row-major entries into `buf`, which holds `len` doubles.
 *
 * # Safety
 * `m` must be a live handle; `buf` must point to `len` writable doubles.
 */
enum OlsStatus ols_matrix_copy_data(const struct OlsMatrix *m, double *buf, size_t len);

/**
 * Least-squares fit of `y` (n×1) on `x` (n×k). Either output may be NULL.
 *
 * # Safety
 * `x`, `y` must be live handles; non-NULL outputs must be writable.
 */
enum OlsStatus ols_fit_matrices(const struct OlsMatrix *x,
                                const struct OlsMatrix *y,
                                struct OlsMatrix **out_beta,
                                struct OlsMatrix **out_fitted);

/**
 * Builds the attention weights that reproduce least squares on `(x, y)`.
 *
 * # Safety
 * `x`, `y` must be live handles; `out` must be writable.
 */
enum OlsStatus ols_config_new(const struct OlsMatrix *x,
                              const struct OlsMatrix *y,
                              struct OlsConfig **out);

/**
 * # Safety
 * `c` must be NULL or a live handle.
 */
void ols_config_free(struct OlsConfig *c);

/**
 * The shared query/key/value weight `L` (k×k).
 *
 * # Safety
 * `c` must be a live handle; `out` must be writable.
 */
enum OlsStatus ols_config_whitening(const struct OlsConfig *c, struct OlsMatrix **out);

/**
 * Regression coefficients `β = L·P` (k×1).
 *
 * # Safety
 * `c` must be a live handle; `out` must be writable.
 */
enum OlsStatus ols_config_coefficients(const struct OlsConfig *c, struct OlsMatrix **out);

/**
 * Attention forward pass of the configured weights on `x` (n×k).
 *
 * # Safety
 * `c`, `x` must be live handles; `out` must be writable.
 */
enum OlsStatus ols_config_forward(const struct OlsConfig *c,
                                  const struct OlsMatrix *x,
                                  struct OlsMatrix **out);

/**
 * Compares the configured attention output with least squares on `(x, y)`.
 *
 * # Safety
 * `x`, `y` must be live handles; `out` must be writable.
 */
enum OlsStatus ols_equivalence_report(const struct OlsMatrix *x,
                                      const struct OlsMatrix *y,
                                      struct OlsEquivalenceReport *out);

/**
 * Reference training setup: n = 500, slope 2, noise variance 1e-4, seed 42,
 * L₀ = 0.5, 5000 epochs, Adam(0.01, 0.9, 0.999, 1e-8), uniform x.
 */
struct OlsTrainConfig ols_train_config_default(void);

/**
 * Trains the scalar model.
 *
 * # Safety
 * `config` must point to a valid struct; `out` must be writable.
 */
enum OlsStatus ols_train(const struct OlsTrainConfig *config, struct OlsTrace **out);

/**
 * # Safety
 * `t` must be NULL or a live handle.
 */
void ols_trace_free(struct OlsTrace *t);

/**
 * Number of recorded epochs, or 0 for NULL.
 *
 * # Safety
 * `t` must be NULL or a live handle.
 */
size_t ols_trace_len(const struct OlsTrace *t);

/**
 * `L* = ((1/n) Σ x²)^(-1/2)`, or NaN for NULL.
 *
 * # Safety
 * `t` must be NULL or a live handle.
 */
double ols_trace_l_star(const struct OlsTrace *t);

/**
 * # Safety
 * `t` must be a live handle; `out` must be writable.
 */
enum OlsStatus ols_trace_record(const struct OlsTrace *t, size_t index, struct OlsEpochRecord *out);

/**
 * Trains on `(x, y)`, shifts a covariance-matched context, and writes the
 * relative error of the in-context prediction against `Zβ`.
 *
 * # Safety
 * `x`, `y` must be live handles; `out_error` must be writable.
 */
enum OlsStatus ols_shift_relative_error(const struct OlsMatrix *x,
                                        const struct OlsMatrix *y,
                                        enum OlsShiftKind kind,
                                        double param,
                                        uint64_t seed,
                                        double *out_error);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OLS_ATTENTION_H */
