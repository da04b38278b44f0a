/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef KSFLOW_H
#define KSFLOW_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum KsStatus {
  KS_STATUS_OK = 0,
  KS_STATUS_NULL_POINTER = 1,
  KS_STATUS_INVALID_INPUT = 2,
  KS_STATUS_HYPOTHESIS = 3,
  KS_STATUS_SOLVER = 4,
  KS_STATUS_NON_FINITE = 5,
  KS_STATUS_FORMAT = 6,
  KS_STATUS_IO = 7,
  /**
   * The output buffer is too small; the required length was written.
   */
  KS_STATUS_BUFFER_TOO_SMALL = 8,
  KS_STATUS_PANIC = 9,
} KsStatus;

/**
 * Parsed run configuration.
 */
typedef struct KsConfig KsConfig;

/**
 * Finished `simulate` run: verdicts plus the diagnostics rows.
 */
typedef struct KsSimulation KsSimulation;

/**
 * Radial solver advanced one step at a time.
 */
typedef struct KsSolver KsSolver;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or the empty string.
 *
 * The pointer stays valid until the next `ks_*` call on the same thread.
 */
const char *ks_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ks_version(void);

/**
 * The built-in reference configuration (Coulomb case, unit-mass Gaussian).
 *
 * # Safety
 * `out` must be valid for a pointer write. Release the handle with [`ks_config_free`].
 */
enum KsStatus ks_config_reference(struct KsConfig **out);

/**
 * Parses TOML configuration text. Relative paths inside resolve against the
 * current directory.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` valid for a pointer write.
 */
enum KsStatus ks_config_parse(const char *toml, struct KsConfig **out);

/**
 * Loads a TOML configuration file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for a pointer write.
 */
enum KsStatus ks_config_load(const char *path, struct KsConfig **out);

/**
 * Replaces the master seed.
 *
 * # Safety
 * `cfg` must be a live handle from a `ks_config_*` constructor.
 */
enum KsStatus ks_config_set_seed(struct KsConfig *cfg, uint64_t seed);

/**
 * # Safety
 * `cfg` must be null or a handle not yet freed.
 */
void ks_config_free(struct KsConfig *cfg);

/**
 * Runs the configured scenario with its monitors. With a non-null `out_dir`
 * the diagnostics CSV and the report are written there.
 *
 * A run whose monitors fail still returns `KS_STATUS_OK`; query the verdict
 * with [`ks_simulation_passed`].
 *
 * # Safety
 * `cfg` must be a live config handle, `out_dir` null or a NUL-terminated
 * string, and `out` valid for a pointer write.
 */
enum KsStatus ks_simulate(const struct KsConfig *cfg,
                          const char *out_dir,
                          struct KsSimulation **out);

/**
 * # Safety
 * `sim` must be a live simulation handle and `passed` valid for a write.
 */
enum KsStatus ks_simulation_passed(const struct KsSimulation *sim, bool *passed);

/**
 * Number of output times.
 *
 * # Safety
 * `sim` must be a live simulation handle and `rows` valid for a write.
 */
enum KsStatus ks_simulation_rows(const struct KsSimulation *sim, size_t *rows);

/**
 * Copies one diagnostics column (`t`, `mass`, `fisher`, ...) into `buf`.
 * `written` always receives the row count, also when `cap` is too small.
 *
 * # Safety
 * `sim` must be a live simulation handle, `name` a NUL-terminated string,
 * `buf` valid for `cap` writes and `written` valid for a write.
 */
enum KsStatus ks_simulation_column(const struct KsSimulation *sim,
                                   const char *name,
                                   double *buf,
                                   size_t cap,
                                   size_t *written);

/**
 * The rendered report. The pointer lives as long as the handle.
 *
 * Returns null when `sim` is null.
 *
 * # Safety
 * `sim` must be null or a live simulation handle.
 */
const char *ks_simulation_report(const struct KsSimulation *sim);

/**
 * # Safety
 * `sim` must be null or a handle not yet freed.
 */
void ks_simulation_free(struct KsSimulation *sim);

/**
 * A radial solver at `t = 0` holding the config's initial data.
 *
 * # Safety
 * `cfg` must be a live config handle and `out` valid for a pointer write.
 */
enum KsStatus ks_solver_new(const struct KsConfig *cfg, struct KsSolver **out);

/**
 * Advances `n_steps` configured steps.
 *
 * # Safety
 * `solver` must be a live solver handle.
 */
enum KsStatus ks_solver_step(struct KsSolver *solver, uint64_t n_steps);

/**
 * # Safety
 * `solver` must be a live solver handle and `t` valid for a write.
 */
enum KsStatus ks_solver_time(const struct KsSolver *solver, double *t);

/**
 * Cell-centre values of `f`; `written` always receives the cell count.
 *
 * # Safety
 * `solver` must be a live solver handle, `buf` valid for `cap` writes and
 * `written` valid for a write.
 */
enum KsStatus ks_solver_values(const struct KsSolver *solver,
                               double *buf,
                               size_t cap,
                               size_t *written);

/**
 * One diagnostic of the current state, by CSV column name.
 *
 * # Safety
 * `solver` must be a live solver handle, `name` a NUL-terminated string and
 * `value` valid for a write.
 */
enum KsStatus ks_solver_diagnostic(const struct KsSolver *solver, const char *name, double *value);

/**
 * # Safety
 * `solver` must be null or a handle not yet freed.
 */
void ks_solver_free(struct KsSolver *solver);

/**
 * Runs one lifted-operator suite (`frames`, `commutators`, `flows`,
 * `maxwell`, `derivatives`, `dissipation`, `marginal`) with its default
 * exponents. `samples` of 0 keeps the default Monte Carlo size.
 *
 * # Safety
 * `suite` must be a NUL-terminated string; `passed` and `rows` valid for writes.
 */
enum KsStatus ks_verify_lifted(const char *suite,
                               uint64_t samples,
                               uint64_t seed,
                               bool *passed,
                               size_t *rows);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KSFLOW_H */
