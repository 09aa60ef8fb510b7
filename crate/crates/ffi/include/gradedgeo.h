#ifndef GRADEDGEO_H
#define GRADEDGEO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes; the numeric values match the CLI exit codes where they
// overlap.
typedef enum GgStatus {
  GG_STATUS_OK = 0,
  GG_STATUS_CHECK_FAILED = 1,
  GG_STATUS_INVALID_ARGUMENT = 2,
  GG_STATUS_NUMERICAL_FAILURE = 3,
  GG_STATUS_NULL_POINTER = 4,
  GG_STATUS_PANIC = 5,
} GgStatus;

// Opaque problem handle.
typedef struct GgProblem GgProblem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. Valid until the
// next call into the library from the same thread.
const char *gg_last_error(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed already.
void gg_string_free(char *s);

// Builds a catalog problem. `params_json` may be NULL for defaults.
//
// # Safety
// `name` and `params_json` must be NUL-terminated strings or NULL;
// `out` must be writable.
enum GgStatus gg_problem_new(const char *name, const char *params_json, struct GgProblem **out);

// Releases a problem. NULL is ignored.
//
// # Safety
// `p` must come from [`gg_problem_new`] and not have been freed already.
void gg_problem_free(struct GgProblem *p);

// Coordinate dimension, or 0 for NULL.
//
// # Safety
// `p` must be a live handle or NULL.
size_t gg_problem_dim(const struct GgProblem *p);

// Number of levels, or 0 for NULL.
//
// # Safety
// `p` must be a live handle or NULL.
size_t gg_problem_levels(const struct GgProblem *p);

// `exp_x(v)` through the problem's atlas. Writes the point (`dim` values)
// and the index of the chart it is expressed in. Non-positive tolerances
// select the defaults.
//
// # Safety
// `x`, `v` and `out_point` must hold `dim` doubles; `out_chart` may be NULL.
enum GgStatus gg_exp(const struct GgProblem *p,
                     const double *x,
                     const double *v,
                     size_t dim,
                     double rtol,
                     double atol,
                     double *out_point,
                     size_t *out_chart);

// Initial velocity of the geodesic from `x` reaching `y` at time 1.
//
// # Safety
// `x`, `y` and `out_velocity` must hold `dim` doubles.
enum GgStatus gg_connect(const struct GgProblem *p,
                         const double *x,
                         const double *y,
                         size_t dim,
                         double rtol,
                         double atol,
                         double *out_velocity);

// Level distances (`levels` values) and the combined distance. Returns
// `CHECK_FAILED` when some level value is only an upper bound.
//
// # Safety
// `x` and `y` must hold `dim` doubles, `out_levels` must hold `levels`
// doubles (the problem's level count) and `out_rho` must be writable.
enum GgStatus gg_distance(const struct GgProblem *p,
                          const double *x,
                          const double *y,
                          size_t dim,
                          double *out_levels,
                          size_t levels,
                          double *out_rho);

// The Ricci-flow report as JSON for the identity base metric of size `m`.
// `kind` is `flat`, `affine_invariant` or `ebin`.
//
// # Safety
// `kind` must be a NUL-terminated string, `weights` must hold `n_weights`
// doubles and `out_json` must be writable.
enum GgStatus gg_ricci_report(const char *kind,
                              size_t m,
                              const double *weights,
                              size_t n_weights,
                              double lambda,
                              double t_end,
                              char **out_json);

// Runs a CLI command given as a JSON array of arguments (without the
// program name), e.g. `["distance","--problem","flat","--y","1,0"]`.
// Writes the JSON summary and returns the CLI exit code.
//
// # Safety
// `args_json` must be a NUL-terminated string and `out_json` writable.
int32_t gg_run_command(const char *args_json, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRADEDGEO_H */
