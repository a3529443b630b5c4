#ifndef LANDMARK_SURROGATE_H
#define LANDMARK_SURROGATE_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum LsStatus {
  LS_STATUS_OK = 0,
  LS_STATUS_NULL_POINTER = 1,
  /**
   * Malformed or invariant-violating input data or parameters.
   */
  LS_STATUS_VALIDATION = 2,
  /**
   * Estimation failed on valid input, e.g. censoring support exhausted.
   */
  LS_STATUS_ESTIMATION = 3,
  LS_STATUS_IO = 4,
  LS_STATUS_PANIC = 5,
} LsStatus;

/**
 * Shape of a Fieller confidence set.
 */
typedef enum LsFiellerKind {
  LS_FIELLER_KIND_NONE = 0,
  /**
   * `[lower, upper]`.
   */
  LS_FIELLER_KIND_INTERVAL = 1,
  /**
   * `(-inf, lower] U [upper, inf)`.
   */
  LS_FIELLER_KIND_COMPLEMENT = 2,
  /**
   * `[lower, inf)`.
   */
  LS_FIELLER_KIND_UPPER_RAY = 3,
  /**
   * `(-inf, upper]`.
   */
  LS_FIELLER_KIND_LOWER_RAY = 4,
  LS_FIELLER_KIND_WHOLE_LINE = 5,
  LS_FIELLER_KIND_EMPTY = 6,
} LsFiellerKind;

/**
 * Opaque inference report handle.
 */
typedef struct LsReport LsReport;

/**
 * Opaque study handle.
 */
typedef struct LsStudy LsStudy;

typedef struct LsEstimates {
  double delta;
  double delta_s;
  double r_s;
  double delta_t;
  double r_t;
  double iv_s;
  double bandwidth;
} LsEstimates;

typedef struct LsInferenceOptions {
  size_t draws;
  uint64_t seed;
  double alpha;
  /**
   * Nonzero selects the median-absolute-deviation variance.
   */
  int32_t robust_variance;
  /**
   * Nonzero augments with every covariate column.
   */
  int32_t augment;
} LsInferenceOptions;

/**
 * One estimand of a report. Absent intervals are NaN.
 */
typedef struct LsEstimandSummary {
  double point;
  double se;
  double normal_lower;
  double normal_upper;
  double quantile_lower;
  double quantile_upper;
  enum LsFiellerKind fieller_kind;
  double fieller_lower;
  double fieller_upper;
} LsEstimandSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *ls_last_error(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void ls_string_free(char *s);

/**
 * Builds a study from column arrays of length `n`. `group` is 0 for arm A
 * and 1 for arm B; a NaN surrogate marks "not measured". `covariates` is
 * either NULL (with `p = 0`) or row-major `n x p`.
 *
 * # Safety
 * Every non-NULL array must hold `n` (covariates: `n * p`) readable
 * elements; `out` must be writable.
 */
enum LsStatus ls_study_from_arrays(const int32_t *group,
                                   const double *time,
                                   const int32_t *event,
                                   const double *surrogate,
                                   const double *covariates,
                                   size_t p,
                                   size_t n,
                                   double t0,
                                   double t,
                                   struct LsStudy **out);

/**
 * Loads a CSV with the default column names `group,time,event,s` and
 * labels `A`/`B`; remaining columns are covariates.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum LsStatus ls_study_from_csv(const char *path, double t0, double t, struct LsStudy **out);

/**
 * Number of subjects in `arm` (0 = A, 1 = B); 0 for a NULL handle.
 *
 * # Safety
 * `study` must be NULL or a live handle.
 */
size_t ls_study_arm_size(const struct LsStudy *study, int32_t arm);

/**
 * # Safety
 * `study` must be NULL or a handle not yet freed.
 */
void ls_study_free(struct LsStudy *study);

/**
 * Unit-weight point estimates with the default kernel settings.
 *
 * # Safety
 * `study` must be a live handle; `out` must be writable.
 */
enum LsStatus ls_estimate(const struct LsStudy *study, struct LsEstimates *out);

struct LsInferenceOptions ls_inference_options_default(void);

/**
 * Perturbation-resampling inference.
 *
 * # Safety
 * `study` and `options` must be live; `out` must be writable.
 */
enum LsStatus ls_infer(const struct LsStudy *study,
                       const struct LsInferenceOptions *options,
                       struct LsReport **out);

/**
 * # Safety
 * `report` must be a live handle; `out` must be writable.
 */
enum LsStatus ls_report_point(const struct LsReport *report, struct LsEstimates *out);

/**
 * Summary of one estimand by name (`delta`, `delta_s`, `r_s`, `delta_t`,
 * `r_t`, `iv_s`, and `delta_aug`, `delta_s_aug`, `r_s_aug` when augmented).
 *
 * # Safety
 * `report` must be live, `name` NUL-terminated and `out` writable.
 */
enum LsStatus ls_report_estimand(const struct LsReport *report,
                                 const char *name,
                                 struct LsEstimandSummary *out);

/**
 * Full report as JSON; release with [`ls_string_free`]. NULL on failure.
 *
 * # Safety
 * `report` must be NULL or a live handle.
 */
char *ls_report_json(const struct LsReport *report);

/**
 * # Safety
 * `report` must be NULL or a handle not yet freed.
 */
void ls_report_free(struct LsReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LANDMARK_SURROGATE_H */
