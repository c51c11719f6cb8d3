#ifndef QOC_H
#define QOC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum QocStatus {
  QOC_STATUS_OK = 0,
  QOC_STATUS_NULL_POINTER = 1,
  QOC_STATUS_INVALID_UTF8 = 2,
  QOC_STATUS_CONFIG_ERROR = 3,
  QOC_STATUS_NUMERICAL_ERROR = 4,
  QOC_STATUS_OUT_OF_RANGE = 5,
  QOC_STATUS_PANIC = 6,
  QOC_STATUS_OTHER = 7,
} QocStatus;

/**
 * Engine selection for [`qoc_config_set_engine`].
 */
typedef enum QocEngine {
  QOC_ENGINE_Q = 0,
  QOC_ENGINE_MC = 1,
  QOC_ENGINE_BOTH = 2,
} QocEngine;

/**
 * A parsed run configuration.
 */
typedef struct QocConfig QocConfig;

/**
 * Estimates produced by [`qoc_run`].
 */
typedef struct QocResults QocResults;

/**
 * One estimate. The strings are owned by the results handle and stay
 * valid until it is freed.
 */
typedef struct QocResultRow {
  const char *scenario_id;
  const char *engine;
  const char *oc;
  double estimate;
  double se;
  uint64_t replicates;
  double wall_clock_s;
} QocResultRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread; empty after a
 * success. Valid until the next call on the same thread.
 */
const char *qoc_last_error(void);

/**
 * Library version as a static string.
 */
const char *qoc_version(void);

/**
 * Parses a JSON config.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum QocStatus qoc_config_parse(const char *json, struct QocConfig **out);

/**
 * Frees a config; null is ignored.
 *
 * # Safety
 * `cfg` must come from [`qoc_config_parse`] and not be used afterwards.
 */
void qoc_config_free(struct QocConfig *cfg);

/**
 * Number of scenarios in the config.
 *
 * # Safety
 * Pointers must be valid.
 */
enum QocStatus qoc_config_scenario_count(const struct QocConfig *cfg, size_t *out);

/**
 * # Safety
 * `cfg` must be a valid config handle.
 */
enum QocStatus qoc_config_set_engine(struct QocConfig *cfg, enum QocEngine engine);

/**
 * Sets the replicate counts of both engines.
 *
 * # Safety
 * `cfg` must be a valid config handle.
 */
enum QocStatus qoc_config_set_replicates(struct QocConfig *cfg, uint64_t q, uint64_t mc);

/**
 * # Safety
 * `cfg` must be a valid config handle.
 */
enum QocStatus qoc_config_set_seed(struct QocConfig *cfg, uint64_t seed);

/**
 * Runs every scenario of the config with its engines. `threads` = 0 uses
 * the available parallelism. Writes no files.
 *
 * # Safety
 * `cfg` must be a valid config handle and `out` a valid pointer.
 */
enum QocStatus qoc_run(const struct QocConfig *cfg, size_t threads, struct QocResults **out);

/**
 * Number of rows; 0 for null.
 *
 * # Safety
 * `res` must be null or a valid results handle.
 */
size_t qoc_results_len(const struct QocResults *res);

/**
 * Copies row `index` into `out`.
 *
 * # Safety
 * `res` must be a valid results handle and `out` a valid pointer.
 */
enum QocStatus qoc_results_row(const struct QocResults *res,
                               size_t index,
                               struct QocResultRow *out);

/**
 * Frees results; null is ignored.
 *
 * # Safety
 * `res` must come from [`qoc_run`] and not be used afterwards.
 */
void qoc_results_free(struct QocResults *res);

/**
 * Exact probability that a single-arm trial with a uniform prior is
 * declared positive.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum QocStatus qoc_exact_single_arm(uint64_t n,
                                    double reference_rate,
                                    double decision_threshold,
                                    double rate,
                                    double *out);

/**
 * Exact power of the single-stage two-arm trial with uniform priors.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum QocStatus qoc_exact_two_arm_power(uint64_t n0,
                                       uint64_t n1,
                                       double decision_threshold,
                                       double rate0,
                                       double rate1,
                                       double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QOC_H */
