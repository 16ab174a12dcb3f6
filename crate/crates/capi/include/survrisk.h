/*
 * C interface to the survrisk survival-analysis toolkit.
 *
 * Every fallible function returns a status code (SURVRISK_OK on success)
 * and writes its results through out-pointers. After a failure,
 * survrisk_last_error_message() returns a description that stays valid on
 * the calling thread until its next failing survrisk call. Handles from
 * the *_fit functions own their model and must be released with the
 * matching *_free. Event markers are uint8_t: 0 censored, nonzero event.
 */

#ifndef SURVRISK_H
#define SURVRISK_H

/* Generated by cbindgen from the survrisk-capi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * The call succeeded.
 */
#define SURVRISK_OK 0

/**
 * A pointer was null, a length disagreed, or a value was out of range.
 */
#define SURVRISK_ERR_INVALID_ARGUMENT 1

/**
 * The inputs were well formed but the quantity is undefined on them
 * (no events, no comparable pairs, too few subjects).
 */
#define SURVRISK_ERR_DATA 2

/**
 * The computation failed numerically (separation, non-convergence,
 * singular information).
 */
#define SURVRISK_ERR_NUMERIC 3

/**
 * An internal panic was caught at the boundary; see the error message.
 */
#define SURVRISK_ERR_PANIC 4

/**
 * Efron correction for tied event times (the default in the Rust API).
 */
#define SURVRISK_TIES_EFRON 0

/**
 * Breslow correction for tied event times.
 */
#define SURVRISK_TIES_BRESLOW 1

/**
 * A converged Cox proportional-hazards fit.
 */
typedef struct SurvriskCox SurvriskCox;

/**
 * A fitted Kaplan-Meier curve.
 */
typedef struct SurvriskKm SurvriskKm;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * The crate version as a static NUL-terminated string.
 */
const char *survrisk_version(void);

/**
 * Description of the most recent failure on this thread. Empty string if
 * no survrisk call has failed yet. The pointer is invalidated by the next
 * failing call on the same thread.
 */
const char *survrisk_last_error_message(void);

/**
 * Harrell's concordance index of `scores` against right-censored
 * outcomes. Higher scores must indicate higher risk.
 */
int32_t survrisk_c_index(const double *scores,
                         const double *times,
                         const uint8_t *events,
                         size_t len,
                         double *out_c_index);

/**
 * Seed-deterministic percentile bootstrap CI for the concordance index.
 * Undefined resamples (no comparable pairs) are tolerated up to the
 * library's undefined-replicate budget.
 */
int32_t survrisk_c_index_bootstrap_ci(const double *scores,
                                      const double *times,
                                      const uint8_t *events,
                                      size_t len,
                                      size_t n_resamples,
                                      double alpha,
                                      uint64_t seed,
                                      double *out_point,
                                      double *out_ci_lower,
                                      double *out_ci_upper);

/**
 * Fits a Kaplan-Meier curve with a complementary log-log confidence band
 * at level `1 - alpha`. On success `*out_km` owns the curve.
 */
int32_t survrisk_km_fit(const double *times,
                        const uint8_t *events,
                        size_t len,
                        double alpha,
                        struct SurvriskKm **out_km);

/**
 * Number of distinct event times in the curve (0 for a null handle or an
 * event-free curve).
 */
size_t survrisk_km_len(const struct SurvriskKm *km);

/**
 * Copies one step of the curve. `index` must be below `survrisk_km_len`.
 */
int32_t survrisk_km_row(const struct SurvriskKm *km,
                        size_t index,
                        double *out_time,
                        uint64_t *out_at_risk,
                        uint64_t *out_events,
                        double *out_survival,
                        double *out_ci_lower,
                        double *out_ci_upper);

/**
 * Survival estimate and confidence band at `horizon` (right-continuous
 * step lookup; 1.0 before the first event).
 */
int32_t survrisk_km_survival_at(const struct SurvriskKm *km,
                                double horizon,
                                double *out_survival,
                                double *out_ci_lower,
                                double *out_ci_upper);

/**
 * Releases a curve handle. Null is a no-op.
 */
void survrisk_km_free(struct SurvriskKm *km);

/**
 * K-sample log-rank test. `times` and `events` hold all subjects
 * concatenated group by group; `group_sizes` gives the subjects per group.
 */
int32_t survrisk_logrank(const double *times,
                         const uint8_t *events,
                         const size_t *group_sizes,
                         size_t n_groups,
                         double *out_chi2,
                         size_t *out_df,
                         double *out_p_value);

/**
 * Fits a Cox proportional-hazards model on a row-major `n x p` design.
 * `ties` is SURVRISK_TIES_EFRON or SURVRISK_TIES_BRESLOW; `ridge` is the
 * L2 penalty strength (0 disables it). On success `*out_fit` owns the
 * converged fit.
 */
int32_t survrisk_cox_fit(const double *x,
                         size_t n,
                         size_t p,
                         const double *times,
                         const uint8_t *events,
                         int32_t ties,
                         double ridge,
                         struct SurvriskCox **out_fit);

/**
 * Number of fitted coefficients (0 for a null handle).
 */
size_t survrisk_cox_n_coefficients(const struct SurvriskCox *fit);

/**
 * Copies the fitted coefficients into `out` (room for
 * `survrisk_cox_n_coefficients` doubles).
 */
int32_t survrisk_cox_coefficients(const struct SurvriskCox *fit, double *out);

/**
 * Copies the Wald standard errors into `out` (room for
 * `survrisk_cox_n_coefficients` doubles).
 */
int32_t survrisk_cox_standard_errors(const struct SurvriskCox *fit, double *out);

/**
 * Unpenalized log partial likelihood at the fitted coefficients.
 */
int32_t survrisk_cox_log_likelihood(const struct SurvriskCox *fit, double *out);

/**
 * Linear predictor for one covariate row of
 * `survrisk_cox_n_coefficients` doubles.
 */
int32_t survrisk_cox_linear_predictor(const struct SurvriskCox *fit,
                                      const double *covariates,
                                      double *out);

/**
 * Hazard ratio of coefficient `index` per `scale` units, with a Wald
 * confidence interval at level `1 - alpha` and two-sided p-value.
 */
int32_t survrisk_cox_hazard_ratio(const struct SurvriskCox *fit,
                                  size_t index,
                                  double scale,
                                  double alpha,
                                  double *out_hr,
                                  double *out_ci_lower,
                                  double *out_ci_upper,
                                  double *out_p_value);

/**
 * Releases a fit handle. Null is a no-op.
 */
void survrisk_cox_free(struct SurvriskCox *fit);

/**
 * Rule-based Grade Group (1-5) from pattern percentages.
 */
int32_t survrisk_rule_based_gg(double pct_gp3, double pct_gp4, double pct_gp5, uint8_t *out_grade);

/**
 * Frequency-matched discretization of `len` scores into groups 1-5.
 * `reference_counts` holds the five reference group counts and must sum
 * to `len`. Ties in score are broken by input position, earlier rows
 * taking the lower group. Writes one group label per score to
 * `out_groups`.
 */
int32_t survrisk_discretize(const double *scores,
                            size_t len,
                            const uint64_t *reference_counts,
                            uint8_t *out_groups);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SURVRISK_H */
