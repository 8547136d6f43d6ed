#ifndef RBEAM_H
#define RBEAM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a fallible call.
 */
typedef enum RbeamStatus {
  RBEAM_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  RBEAM_STATUS_NULL_POINTER = 1,
  /**
   * Bad argument: non-UTF-8 text, unknown column, short buffer.
   */
  RBEAM_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Config could not be read, parsed or validated.
   */
  RBEAM_STATUS_CONFIG = 3,
  /**
   * Integration or analysis failed.
   */
  RBEAM_STATUS_SIMULATION = 4,
  RBEAM_STATUS_IO = 5,
  /**
   * A panic was caught at the boundary; treat as a bug.
   */
  RBEAM_STATUS_PANIC = 6,
} RbeamStatus;

/**
 * Column of a sampled trajectory.
 */
typedef enum RbeamColumn {
  /**
   * s
   */
  RBEAM_COLUMN_TIME = 0,
  /**
   * Photon density, m^-3.
   */
  RBEAM_COLUMN_V1 = 1,
  /**
   * Upper-level density, m^-3.
   */
  RBEAM_COLUMN_V2 = 2,
  /**
   * Output power, W.
   */
  RBEAM_COLUMN_OUTPUT_POWER = 3,
  /**
   * Pump power, W.
   */
  RBEAM_COLUMN_DRIVE = 4,
} RbeamColumn;

/**
 * Parameter set (opaque).
 */
typedef struct RbeamConfig RbeamConfig;

/**
 * Sampled trajectory (opaque).
 */
typedef struct RbeamTimeSeries RbeamTimeSeries;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null if none.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *rbeam_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rbeam_version(void);

/**
 * New config holding the built-in defaults. Never null.
 */
struct RbeamConfig *rbeam_config_default(void);

/**
 * Read a config file. On success `*out` receives a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RbeamStatus rbeam_config_load(const char *path, struct RbeamConfig **out);

/**
 * Parse config text. On success `*out` receives a new handle.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RbeamStatus rbeam_config_parse(const char *text, struct RbeamConfig **out);

/**
 * Override the random seed.
 *
 * # Safety
 * `cfg` must be a live handle or null.
 */
enum RbeamStatus rbeam_config_set_seed(struct RbeamConfig *cfg, uint64_t seed);

/**
 * Pump power at lasing threshold, W.
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
enum RbeamStatus rbeam_threshold_power(const struct RbeamConfig *cfg, double *out);

/**
 * Settled output power for a constant pump, W.
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
enum RbeamStatus rbeam_steady_output_power(const struct RbeamConfig *cfg,
                                           double pump_power,
                                           double *out);

/**
 * Integrate the configured drive from the configured initial state.
 * On success `*out` receives a new handle.
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
enum RbeamStatus rbeam_transient(const struct RbeamConfig *cfg, struct RbeamTimeSeries **out);

/**
 * Number of samples; 0 for a null handle.
 *
 * # Safety
 * `ts` must be a live handle or null.
 */
size_t rbeam_timeseries_len(const struct RbeamTimeSeries *ts);

/**
 * Copy one column into `dst`, which must hold at least
 * `rbeam_timeseries_len` values.
 *
 * # Safety
 * `ts` must be a live handle and `dst` valid for `dst_len` writes.
 */
enum RbeamStatus rbeam_timeseries_copy(const struct RbeamTimeSeries *ts,
                                       enum RbeamColumn column,
                                       double *dst,
                                       size_t dst_len);

/**
 * Accumulated relative error estimate for v1 and v2, written to
 * `out[0]` and `out[1]`.
 *
 * # Safety
 * `ts` must be a live handle and `out` valid for two writes.
 */
enum RbeamStatus rbeam_timeseries_error_estimate(const struct RbeamTimeSeries *ts, double *out);

/**
 * Release a config. Null is ignored.
 *
 * # Safety
 * `cfg` must come from this library and not be used afterwards.
 */
void rbeam_config_free(struct RbeamConfig *cfg);

/**
 * Release a trajectory. Null is ignored.
 *
 * # Safety
 * `ts` must come from this library and not be used afterwards.
 */
void rbeam_timeseries_free(struct RbeamTimeSeries *ts);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RBEAM_H */
