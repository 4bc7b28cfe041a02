#ifndef CLC_LQR_H
#define CLC_LQR_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum {
  CLC_STATUS_OK = 0,
  CLC_STATUS_NULL_POINTER = 1,
  CLC_STATUS_INVALID_INPUT = 2,
  CLC_STATUS_LENGTH_MISMATCH = 3,
  CLC_STATUS_DEGENERATE_COST = 4,
  CLC_STATUS_CAPACITY_EXCEEDED = 5,
  CLC_STATUS_OUT_OF_RANGE = 6,
  CLC_STATUS_NO_FIXED_POINT = 7,
  CLC_STATUS_ILL_POSED = 8,
  CLC_STATUS_SINGULAR_COUPLING = 9,
  CLC_STATUS_DIVERGENCE = 10,
  CLC_STATUS_IO_ERROR = 11,
  CLC_STATUS_PANIC = 12,
} ClcStatus;

/**
 * Combined system instance and cost schedule behind an opaque pointer.
 */
typedef struct ClcProblem ClcProblem;

/**
 * Uniform grid bounds and point counts for the table backend.
 */
typedef struct {
  double x_min;
  double x_max;
  double u_min;
  double u_max;
  double xhat_min;
  double xhat_max;
  uintptr_t n_x;
  uintptr_t n_u;
  uintptr_t n_xhat;
} ClcGridSpec;

/**
 * Static description of a status code.
 */
const char *clc_status_message(ClcStatus status);

/**
 * Creates a problem handle. `q` has `horizon + 1` entries, `r` has
 * `horizon`. On success writes the handle to `out`.
 *
 * # Safety
 * `q` and `r` must point to readable arrays of the stated lengths; `out`
 * must be a valid location for one pointer. The handle must be released
 * with [`clc_problem_free`].
 */
ClcStatus clc_problem_new(double a_true,
                          double b_true,
                          double a_model,
                          double b_model,
                          double x0,
                          const double *q,
                          uintptr_t q_len,
                          const double *r,
                          uintptr_t r_len,
                          ClcProblem **out);

/**
 * Releases a handle created by [`clc_problem_new`]. Null is a no-op.
 *
 * # Safety
 * `problem` must be null or a pointer previously returned by
 * [`clc_problem_new`] that has not been freed yet.
 */
void clc_problem_free(ClcProblem *problem);

/**
 * Number of stages of the problem behind the handle; 0 on null.
 *
 * # Safety
 * `problem` must be null or a live handle.
 */
uintptr_t clc_problem_horizon(const ClcProblem *problem);

/**
 * Exact solution with the true dynamics. `gains_out` takes `horizon`
 * entries, `value_coeffs_out` takes `horizon + 1`; either may be null to
 * skip it.
 *
 * # Safety
 * `problem` must be a live handle; non-null out buffers must have the
 * stated capacities.
 */
ClcStatus clc_riccati_solve(const ClcProblem *problem,
                            double *gains_out,
                            double *value_coeffs_out,
                            double *optimal_cost_out);

/**
 * The a-priori penalty weights `-Q_t + epsilon` (zero-effort class).
 * `beta_out` takes `horizon` entries.
 *
 * # Safety
 * `problem` must be a live handle; `beta_out` must hold `horizon` doubles.
 */
ClcStatus clc_no_effort_beta(const ClcProblem *problem, double epsilon, double *beta_out);

/**
 * The terminal penalty weight `-Q_T`.
 *
 * # Safety
 * `problem` must be a live handle; `beta_out` must hold one double.
 */
ClcStatus clc_terminal_beta(const ClcProblem *problem, double *beta_out);

/**
 * Full pipeline over the lookup-table backend: build the table for `beta`
 * on `grids`, resolve the coupled equations by direct search, execute the
 * resolved controls. `controls_out` takes `horizon` entries.
 *
 * # Safety
 * `problem` must be a live handle, `beta` must hold `beta_len` doubles,
 * and non-null out buffers must have the stated capacities.
 */
ClcStatus clc_execute_grid(const ClcProblem *problem,
                           const double *beta,
                           uintptr_t beta_len,
                           ClcGridSpec grids,
                           double *controls_out,
                           double *jr_out,
                           uint64_t *episodes_out);

/**
 * Full pipeline over the exact closed-form backend.
 *
 * # Safety
 * Same contracts as [`clc_execute_grid`].
 */
ClcStatus clc_execute_closed_form(const ClcProblem *problem,
                                  const double *beta,
                                  uintptr_t beta_len,
                                  double *controls_out,
                                  double *jr_out,
                                  uint64_t *episodes_out);

/**
 * Finite-difference descent on the realized cost over the closed-form
 * backend, starting from `beta_init` (`horizon` entries, terminal frozen).
 * Writes the best observed iterate.
 *
 * # Safety
 * `problem` must be a live handle; `beta_init` and `beta_best_out` must
 * hold `horizon` doubles each.
 */
ClcStatus clc_learn_beta_closed_form(const ClcProblem *problem,
                                     const double *beta_init,
                                     uintptr_t beta_len,
                                     double step_size,
                                     double fd_delta,
                                     uintptr_t max_iters,
                                     double *beta_best_out,
                                     double *j_best_out,
                                     uint64_t *episodes_out);

#endif  /* CLC_LQR_H */
