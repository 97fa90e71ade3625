/* SPDX-License-Identifier: MIT OR Apache-2.0 */

#ifndef INGARCH_CPT_H
#define INGARCH_CPT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result codes.
 */
typedef enum CptStatus {
  CPT_STATUS_OK = 0,
  CPT_STATUS_NULL_POINTER = 1,
  CPT_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Data or model error: support, parse, degenerate segment, failed fit.
   */
  CPT_STATUS_DATA = 3,
  CPT_STATUS_BUFFER_TOO_SMALL = 4,
  CPT_STATUS_PANIC = 5,
} CptStatus;

/**
 * A parsed model specification.
 */
typedef struct CptModel CptModel;

/**
 * Result of [`cpt_run_test`].
 */
typedef struct CptReport CptReport;

/**
 * Options for [`cpt_run_test`].
 */
typedef struct CptTestOptions CptTestOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or null. Valid until the next call.
 */
const char *cpt_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cpt_version(void);

/**
 * Parses a model such as `nb-ingarch:r=8`.
 */
enum CptStatus cpt_model_new(const char *spec, struct CptModel **out);

void cpt_model_free(struct CptModel *model);

/**
 * Number of parameters, or 0 for a null handle.
 */
size_t cpt_model_dim(const struct CptModel *model);

/**
 * Conditional log-likelihood of `y[start-1..end]` (1-based, inclusive)
 * with the filter started at the segment mean.
 */
enum CptStatus cpt_loglik(const struct CptModel *model,
                          const double *theta,
                          size_t theta_len,
                          const uint64_t *y,
                          size_t n,
                          size_t start,
                          size_t end,
                          double *out);

/**
 * Maximum likelihood fit on `y[start-1..end]`. Writes `dim` values to
 * `theta_out`; `loglik_out` and `converged_out` may be null.
 */
enum CptStatus cpt_fit(const struct CptModel *model,
                       const uint64_t *y,
                       size_t n,
                       size_t start,
                       size_t end,
                       double *theta_out,
                       size_t theta_len,
                       double *loglik_out,
                       bool *converged_out);

/**
 * Simulates `n` counts into `y_out`. With `theta_after` non-null, the
 * parameter switches after index `change_at` (1-based).
 */
enum CptStatus cpt_simulate(const struct CptModel *model,
                            const double *theta,
                            const double *theta_after,
                            size_t theta_len,
                            size_t n,
                            size_t change_at,
                            size_t burn_in,
                            uint64_t seed,
                            uint64_t *y_out);

/**
 * `c_α` for dimension `d` and weight `(τ(1−τ))^gamma` (`gamma = 0` gives `q ≡ 1`).
 * Not cached.
 */
enum CptStatus cpt_critical_value(size_t d,
                                  double gamma,
                                  double alpha,
                                  size_t paths,
                                  size_t grid,
                                  uint64_t seed,
                                  double *out);

/**
 * Defaults: α = 0.05, `q ≡ 1`, automatic trimming, simulated critical value.
 */
struct CptTestOptions *cpt_test_options_new(void);

void cpt_test_options_free(struct CptTestOptions *opts);

enum CptStatus cpt_test_options_set_alpha(struct CptTestOptions *opts, double alpha);

/**
 * `gamma = 0` selects `q ≡ 1`.
 */
enum CptStatus cpt_test_options_set_weight(struct CptTestOptions *opts, double gamma);

/**
 * Trimming windows; 0 means automatic.
 */
enum CptStatus cpt_test_options_set_trim(struct CptTestOptions *opts, size_t un, size_t vn);

/**
 * Fixed critical value; a negative value restores simulation.
 */
enum CptStatus cpt_test_options_set_critical_value(struct CptTestOptions *opts, double c);

/**
 * Monte Carlo settings for a simulated critical value.
 */
enum CptStatus cpt_test_options_set_simulation(struct CptTestOptions *opts,
                                               size_t paths,
                                               size_t grid,
                                               uint64_t seed);

/**
 * Runs the test. `opts` may be null for defaults.
 */
enum CptStatus cpt_run_test(const struct CptModel *model,
                            const uint64_t *y,
                            size_t n,
                            const struct CptTestOptions *opts,
                            struct CptReport **out);

void cpt_report_free(struct CptReport *report);

double cpt_report_statistic(const struct CptReport *report);

double cpt_report_critical_value(const struct CptReport *report);

/**
 * Estimated change point (1-based), or 0 for a null handle.
 */
size_t cpt_report_t_hat(const struct CptReport *report);

bool cpt_report_reject(const struct CptReport *report);

size_t cpt_report_curve_len(const struct CptReport *report);

/**
 * Copies the curve; invalid points are written as NaN.
 */
enum CptStatus cpt_report_curve(const struct CptReport *report,
                                size_t *k_out,
                                double *value_out,
                                size_t len);

/**
 * Report as JSON; release with [`cpt_string_free`]. Null on failure.
 */
char *cpt_report_to_json(const struct CptReport *report);

void cpt_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INGARCH_CPT_H */
