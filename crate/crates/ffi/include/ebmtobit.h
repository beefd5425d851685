/* C interface of the ebmtobit library. Regenerate with:
 *   cbindgen --crate ebmtobit-ffi --output include/ebmtobit.h
 */

#ifndef EBMTOBIT_H
#define EBMTOBIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every API call.
typedef enum EbtStatus {
  // The call succeeded.
  EBT_STATUS_OK = 0,
  // A required pointer argument was null.
  EBT_STATUS_NULL_POINTER = 1,
  // The input data or options were rejected before solving.
  EBT_STATUS_INVALID_INPUT = 2,
  // The solver failed on otherwise well-formed input.
  EBT_STATUS_SOLVE_FAILED = 3,
  // An internal invariant was violated; the library caught a panic.
  EBT_STATUS_PANIC = 4,
} EbtStatus;

// A fitted model: the estimated prior plus the averaged mean estimate for
// the training rows. Opaque; create with [`ebt_fit`], release with
// [`ebt_model_free`].
typedef struct EbtModel EbtModel;

// Tuning knobs of [`ebt_fit`]; pass null to use the defaults from
// [`ebt_fit_options_default`].
typedef struct EbtFitOptions {
  // Support-refinement rounds.
  size_t iterations;
  // Leading rounds excluded from the averaged estimate.
  size_t burn_in;
  // Support atoms per round; 0 means one atom per data row.
  size_t support_size;
  // Standard deviation of the Gaussian jitter used when resampling
  // support atoms; 0 derives per-column jitter from the data instead.
  double jitter_sd;
  // Base seed of the support resampling.
  uint64_t seed;
  // Relative log-likelihood tolerance of the weight solver.
  double tol;
  // Iteration cap of the weight solver.
  size_t max_iter;
} EbtFitOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the most recent failure on this thread; empty when the last
// call succeeded. The pointer stays valid until the next API call on the
// same thread.
const char *ebt_last_error_message(void);

// Fill `options` with the library defaults.
//
// # Safety
// `options` must be a valid pointer to an [`EbtFitOptions`].
enum EbtStatus ebt_fit_options_default(struct EbtFitOptions *options);

// Fit a model to a partly interval-censored matrix.
//
// `lower` and `upper` are row-major `n_rows x n_cols` endpoint buffers; a
// cell with equal endpoints is a direct observation. `sigma` is either a
// buffer of per-cell noise levels with the same shape or null, in which
// case every cell uses `default_sigma`. On success `*out_model` owns the
// fitted model.
//
// # Safety
// The buffer pointers must be valid for their stated shapes, and
// `out_model` must be a valid pointer slot.
enum EbtStatus ebt_fit(const double *lower,
                       const double *upper,
                       const double *sigma,
                       size_t n_rows,
                       size_t n_cols,
                       double default_sigma,
                       const struct EbtFitOptions *options,
                       struct EbtModel **out_model);

// Report the model's training-row count, column count, and atom count.
//
// # Safety
// `model` must come from [`ebt_fit`]; the out pointers must be valid.
enum EbtStatus ebt_model_sizes(const struct EbtModel *model,
                               size_t *out_rows,
                               size_t *out_cols,
                               size_t *out_atoms);

// Copy the averaged mean estimate of the training rows
// (`n_rows x n_cols`, row-major) into `out`.
//
// # Safety
// `out` must hold `n_rows * n_cols` writable doubles.
enum EbtStatus ebt_model_estimate(const struct EbtModel *model, double *out);

// Copy the prior's support atoms (`n_atoms x n_cols`, row-major) into
// `out`.
//
// # Safety
// `out` must hold `n_atoms * n_cols` writable doubles.
enum EbtStatus ebt_model_support(const struct EbtModel *model, double *out);

// Copy the prior's atom weights (`n_atoms`) into `out`.
//
// # Safety
// `out` must hold `n_atoms` writable doubles.
enum EbtStatus ebt_model_weights(const struct EbtModel *model, double *out);

// Posterior mean and variance for new rows under the fitted prior.
//
// `lower`/`upper` are row-major `n_rows x n_cols` buffers with the model's
// column count; `sigma` follows the same convention as [`ebt_fit`]. Both
// out buffers receive `n_rows x n_cols` doubles; either may be null to
// skip that summary.
//
// # Safety
// All non-null pointers must be valid for their stated shapes.
enum EbtStatus ebt_impute(const struct EbtModel *model,
                          const double *lower,
                          const double *upper,
                          const double *sigma,
                          size_t n_rows,
                          double default_sigma,
                          double *out_mean,
                          double *out_variance);

// Release a model. Null is accepted and ignored.
//
// # Safety
// `model` must be null or a pointer from [`ebt_fit`] not yet freed.
void ebt_model_free(struct EbtModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EBMTOBIT_H */
