#ifndef SGRAPHS_H
#define SGRAPHS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum SgStatus {
  SG_OK = 0,
  /**
   * A required pointer argument was null.
   */
  SG_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  SG_INVALID_UTF8 = 2,
  SG_IO_ERROR = 3,
  /**
   * Malformed dataset, graph document or trajectory, or a numerical failure.
   */
  SG_DATA_ERROR = 4,
  SG_CONFIG_ERROR = 5,
  SG_PANIC = 6,
} SgStatus;

/**
 * A factor graph owned by the library.
 */
typedef struct SgGraph SgGraph;

/**
 * A finished SLAM run over one dataset.
 */
typedef struct SgRun SgRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string.
 * Valid until the next call into the library from the same thread.
 */
const char *sg_last_error(void);

/**
 * Releases a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void sg_string_free(char *s);

/**
 * Parses a graph document as written by [`sg_graph_to_json`].
 *
 * # Safety
 * `json` must be a nul-terminated string; `out` must be writable.
 */
enum SgStatus sg_graph_from_json(const char *json, struct SgGraph **out);

/**
 * Serializes the graph; floats round-trip exactly.
 *
 * # Safety
 * `graph` must be a live handle; `out` must be writable.
 */
enum SgStatus sg_graph_to_json(const struct SgGraph *graph, char **out);

/**
 * Number of variables and factors.
 *
 * # Safety
 * `graph` must be a live handle; both outputs must be writable.
 */
enum SgStatus sg_graph_counts(const struct SgGraph *graph, size_t *variables, size_t *factors);

/**
 * Runs Levenberg-Marquardt with default settings. `iterations` and
 * `final_cost` may be null.
 *
 * # Safety
 * `graph` must be a live handle not used concurrently from another thread.
 */
enum SgStatus sg_graph_optimize(struct SgGraph *graph, size_t *iterations, double *final_cost);

/**
 * Destroys a graph handle. Null is ignored.
 *
 * # Safety
 * `graph` must come from this library and not have been freed already.
 */
void sg_graph_free(struct SgGraph *graph);

/**
 * Runs SLAM over a dataset directory. `config` holds `key = value` lines
 * and may be null for the defaults.
 *
 * # Safety
 * String arguments must be nul-terminated; `out` must be writable.
 */
enum SgStatus sg_run_dataset(const char *dataset_dir, const char *config, struct SgRun **out);

/**
 * The run's `report.json` content.
 *
 * # Safety
 * `run` must be a live handle; `out` must be writable.
 */
enum SgStatus sg_run_report_json(const struct SgRun *run, char **out);

/**
 * Writes est.tum, map.xyz, sgraph.json, report.json and timing.json.
 *
 * # Safety
 * `run` must be a live handle; `out_dir` must be nul-terminated.
 */
enum SgStatus sg_run_write_outputs(const struct SgRun *run, const char *out_dir);

/**
 * Copies the run's optimized graph into a new handle.
 *
 * # Safety
 * `run` must be a live handle; `out` must be writable.
 */
enum SgStatus sg_run_graph(const struct SgRun *run, struct SgGraph **out);

/**
 * Destroys a run handle. Null is ignored.
 *
 * # Safety
 * `run` must come from this library and not have been freed already.
 */
void sg_run_free(struct SgRun *run);

/**
 * Absolute trajectory error between two TUM files.
 *
 * # Safety
 * Paths must be nul-terminated; `out` must be writable.
 */
enum SgStatus sg_eval_ate(const char *estimate, const char *reference, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SGRAPHS_H */
