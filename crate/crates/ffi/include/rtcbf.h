#ifndef RTCBF_H
#define RTCBF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>

/**
 * Result code of every fallible call.
 */
typedef enum RtcbfStatus {
  RTCBF_STATUS_OK = 0,
  RTCBF_STATUS_NULL_POINTER = 1,
  RTCBF_STATUS_INVALID_UTF8 = 2,
  RTCBF_STATUS_PARSE = 3,
  RTCBF_STATUS_VALIDATION = 4,
  RTCBF_STATUS_IO = 5,
  RTCBF_STATUS_INFEASIBLE = 6,
  RTCBF_STATUS_INVALID_ARGUMENT = 7,
  RTCBF_STATUS_SOLVER = 8,
  RTCBF_STATUS_OUT_OF_RANGE = 9,
  RTCBF_STATUS_PANIC = 10,
} RtcbfStatus;

/**
 * A validated scenario.
 */
typedef struct RtcbfScenario RtcbfScenario;

/**
 * A finished run together with its scenario and metrics.
 */
typedef struct RtcbfTrace RtcbfTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *rtcbf_version(void);

/**
 * Message for the last failed call on this thread, or null.
 *
 * The pointer stays valid until the next rtcbf call on the same thread.
 */
const char *rtcbf_last_error_message(void);

/**
 * Parses and validates a scenario from a JSON string.
 */
enum RtcbfStatus rtcbf_scenario_from_json(const char *json, struct RtcbfScenario **out);

/**
 * Reads a scenario file.
 */
enum RtcbfStatus rtcbf_scenario_load(const char *path, struct RtcbfScenario **out);

/**
 * Number of agents in the scenario.
 */
enum RtcbfStatus rtcbf_scenario_agent_count(const struct RtcbfScenario *s, size_t *out);

/**
 * Freezes every α at its initial value when `fixed` is true.
 */
enum RtcbfStatus rtcbf_scenario_set_fixed_alpha(struct RtcbfScenario *s, bool fixed);

void rtcbf_scenario_free(struct RtcbfScenario *s);

/**
 * Runs the scenario to completion.
 */
enum RtcbfStatus rtcbf_run(const struct RtcbfScenario *s, struct RtcbfTrace **out);

enum RtcbfStatus rtcbf_trace_step_count(const struct RtcbfTrace *t, size_t *out);

/**
 * Pose `(x, y, heading)` of `agent` at record `step`, written to `out[0..3]`.
 */
enum RtcbfStatus rtcbf_trace_pose(const struct RtcbfTrace *t,
                                  size_t step,
                                  size_t agent,
                                  double *out);

/**
 * Applied control of `agent` at record `step`, written to `out[0..2]`.
 * `emergency` is set when the stop fallback was used.
 */
enum RtcbfStatus rtcbf_trace_control(const struct RtcbfTrace *t,
                                     size_t step,
                                     size_t agent,
                                     double *out,
                                     bool *emergency);

/**
 * α of ordered pair `(i, j)` at record `step`.
 */
enum RtcbfStatus rtcbf_trace_alpha(const struct RtcbfTrace *t,
                                   size_t step,
                                   size_t i,
                                   size_t j,
                                   double *out);

/**
 * Smallest barrier value over the run, across all intact pairs.
 */
enum RtcbfStatus rtcbf_trace_min_h(const struct RtcbfTrace *t, double *out);

/**
 * Number of infeasible safety QPs in the run.
 */
enum RtcbfStatus rtcbf_trace_infeasible_count(const struct RtcbfTrace *t, size_t *out);

/**
 * Writes trace.csv, pairs.csv, summary.json and the SVG plots into `dir`.
 */
enum RtcbfStatus rtcbf_trace_write(const struct RtcbfTrace *t, const char *dir, bool svg);

void rtcbf_trace_free(struct RtcbfTrace *t);

/**
 * Solves `min ||u - u_ref||^2` s.t. `A u >= b`, `lo <= u <= hi`.
 *
 * `a` is row-major with `n_rows * dim` entries; `a` and `b` may be null
 * when `n_rows` is 0. The minimizer is written to `u_out[0..dim]`.
 */
enum RtcbfStatus rtcbf_solve_qp(size_t dim,
                                const double *u_ref,
                                size_t n_rows,
                                const double *a,
                                const double *b,
                                const double *lo,
                                const double *hi,
                                double *u_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RTCBF_H */
