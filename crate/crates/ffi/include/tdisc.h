#ifndef TDISC_H
#define TDISC_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/*
 Status codes shared by all functions.
 */
typedef enum TdStatus {
  TD_STATUS_OK = 0,
  TD_STATUS_INVALID_ARGUMENT = 1,
  TD_STATUS_NUMERIC_DOMAIN = 2,
  TD_STATUS_DEGENERATE_DESIGN = 3,
  TD_STATUS_INVALID_START = 4,
  TD_STATUS_SYNTAX = 5,
  TD_STATUS_CONFIG = 6,
  TD_STATUS_IO = 7,
  TD_STATUS_NULL_POINTER = 8,
  TD_STATUS_BUFFER_TOO_SMALL = 9,
  TD_STATUS_PANIC = 10,
} TdStatus;

/*
 An approximate design: support points with weights summing to one.
 */
typedef struct TdDesign TdDesign;

/*
 A parsed problem together with its solver options and start design.
 */
typedef struct TdProblem TdProblem;

/*
 The result of `td_solve`.
 */
typedef struct TdReport TdReport;

/*
 Scalar summary of a solve.
 */
typedef struct TdSummary {
  double t_value;
  double max_psi;
  double argmax;
  double efficiency;
  size_t iterations;
  /*
   1 when the efficiency tolerance was met.
   */
  int32_t converged;
} TdSummary;

/*
 Outcome of the equivalence-theorem check.
 */
typedef struct TdCheck {
  double t_value;
  double max_psi;
  double argmax;
  double gap_ratio;
  double efficiency;
  double support_deviation;
  /*
   1 when the design passes at the given tolerance.
   */
  int32_t pass;
} TdCheck;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failing call on this thread, or null after a
 success. The pointer stays valid until the next call on the same thread.
 */
const char *td_last_error_message(void);

/*
 Parses a TOML problem configuration (the same format as the CLI).

 # Safety
 `config` must be a NUL-terminated string; `out` must be writable.
 */
enum TdStatus td_problem_from_config(const char *config, struct TdProblem **out);

/*
 # Safety
 `p` must come from `td_problem_from_config` and not be used afterwards.
 */
void td_problem_free(struct TdProblem *p);

/*
 Number of pairwise comparisons after the prior expansion.

 # Safety
 `p` must be a live problem handle; `out` must be writable.
 */
enum TdStatus td_problem_comparisons(const struct TdProblem *p, size_t *out);

/*
 The configured starting design.

 # Safety
 `p` must be a live problem handle; `out` must be writable.
 */
enum TdStatus td_problem_start(const struct TdProblem *p, struct TdDesign **out);

/*
 Builds a design from `n` distinct points in any order; the weights must sum to one.

 # Safety
 `points` and `weights` must point to `n` doubles; `out` must be writable.
 */
enum TdStatus td_design_new(const double *points,
                            const double *weights,
                            size_t n,
                            struct TdDesign **out);

/*
 # Safety
 `d` must come from this library and not be used afterwards.
 */
void td_design_free(struct TdDesign *d);

/*
 Number of support points.

 # Safety
 `d` must be a live design handle; `out` must be writable.
 */
enum TdStatus td_design_len(const struct TdDesign *d, size_t *out);

/*
 Copies the sorted support points and weights into buffers of length `cap`.

 # Safety
 `points` and `weights` must be writable for `cap` doubles.
 */
enum TdStatus td_design_get(const struct TdDesign *d, double *points, double *weights, size_t cap);

/*
 The criterion value `T_P` of a design.

 # Safety
 `p` and `d` must be live handles; `out` must be writable.
 */
enum TdStatus td_t_value(const struct TdProblem *p, const struct TdDesign *d, double *out);

/*
 Runs the solver from `start`, or from the configured start when null.

 # Safety
 `p` must be live, `start` live or null, `out` writable.
 */
enum TdStatus td_solve(const struct TdProblem *p,
                       const struct TdDesign *start,
                       struct TdReport **out);

/*
 # Safety
 `r` must come from `td_solve` and not be used afterwards.
 */
void td_report_free(struct TdReport *r);

/*
 # Safety
 `r` must be a live report; `out` must be writable.
 */
enum TdStatus td_report_summary(const struct TdReport *r, struct TdSummary *out);

/*
 A copy of the optimised design.

 # Safety
 `r` must be a live report; `out` must be writable.
 */
enum TdStatus td_report_design(const struct TdReport *r, struct TdDesign **out);

/*
 Equivalence-theorem check; `tol <= 0` uses the configured tolerance.

 # Safety
 `p` and `d` must be live handles; `out` must be writable.
 */
enum TdStatus td_check(const struct TdProblem *p,
                       const struct TdDesign *d,
                       double tol,
                       struct TdCheck *out);

/*
 Ψ on `n` equally spaced points of the design space, written to `xs` and `psi`.

 # Safety
 `xs` and `psi` must be writable for `n` doubles.
 */
enum TdStatus td_psi_curve(const struct TdProblem *p,
                           const struct TdDesign *d,
                           size_t n,
                           double *xs,
                           double *psi);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TDISC_H */
