#ifndef ECSIM_H
#define ECSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Time-integration schemes.
 */
typedef enum {
  /**
   * The scheme configured in the scenario.
   */
  ECSIM_SCHEME_DEFAULT = 0,
  ECSIM_SCHEME_CENIC1 = 1,
  ECSIM_SCHEME_CENIC2 = 2,
  ECSIM_SCHEME_IE = 3,
  ECSIM_SCHEME_RK3 = 4,
  ECSIM_SCHEME_FIXED = 5,
} EcsimScheme;

/**
 * Result codes.
 */
typedef enum {
  ECSIM_STATUS_OK = 0,
  ECSIM_STATUS_NULL_POINTER = 1,
  ECSIM_STATUS_INVALID_ARGUMENT = 2,
  ECSIM_STATUS_VALIDATION = 3,
  ECSIM_STATUS_CONFIGURATION = 4,
  ECSIM_STATUS_PARSE = 5,
  ECSIM_STATUS_SOLVER_STALL = 6,
  ECSIM_STATUS_STEP_UNDERFLOW = 7,
  ECSIM_STATUS_NON_FINITE = 8,
  ECSIM_STATUS_BUDGET = 9,
  ECSIM_STATUS_INTERNAL = 10,
  ECSIM_STATUS_IO = 11,
  ECSIM_STATUS_PANIC = 12,
} EcsimStatus;

/**
 * Opaque assembled model.
 */
typedef struct EcsimModel EcsimModel;

/**
 * Opaque simulator bound to a model.
 */
typedef struct EcsimSimulator EcsimSimulator;

/**
 * Work counters of a simulator.
 */
typedef struct {
  double time;
  size_t steps_attempted;
  size_t steps_accepted;
  size_t steps_rejected;
  size_t newton_iterations;
  size_t factorizations;
  size_t linesearch_iterations;
  size_t geometry_queries;
  double wall_time;
} EcsimStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *ecsim_last_error_message(void);

/**
 * Parses and validates a scenario given as JSON text.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a writable pointer.
 */
EcsimStatus ecsim_model_from_json(const char *json, EcsimModel **out);

/**
 * Assembles a builtin scenario. `seed` replaces the default sampling seed
 * when `use_seed` is true.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a writable pointer.
 */
EcsimStatus ecsim_model_from_builtin(const char *name,
                                     bool use_seed,
                                     uint64_t seed,
                                     EcsimModel **out);

/**
 * Number of position coordinates, or 0 for a null model.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t ecsim_model_nq(const EcsimModel *model);

/**
 * Number of velocity coordinates, or 0 for a null model.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t ecsim_model_nv(const EcsimModel *model);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void ecsim_model_free(EcsimModel *model);

/**
 * Creates a simulator at the model's initial state. `accuracy` ≤ 0 keeps
 * the scenario's accuracy. The simulator keeps its own reference to the
 * model, which may be freed independently.
 *
 * # Safety
 * `model` must be a live handle and `out` a writable pointer.
 */
EcsimStatus ecsim_simulator_new(const EcsimModel *model,
                                EcsimScheme scheme,
                                double accuracy,
                                EcsimSimulator **out);

/**
 * Advances the simulator to time `t_final`.
 *
 * # Safety
 * `sim` must be a live handle.
 */
EcsimStatus ecsim_simulator_advance_to(EcsimSimulator *sim, double t_final);

/**
 * Current simulation time, or NaN for a null handle.
 *
 * # Safety
 * `sim` must be null or a live handle.
 */
double ecsim_simulator_time(const EcsimSimulator *sim);

/**
 * Copies the state into `q` (length `nq`) and `v` (length `nv`).
 *
 * # Safety
 * `sim` must be a live handle, `q` and `v` writable for `nq` and `nv`
 * doubles.
 */
EcsimStatus ecsim_simulator_get_state(const EcsimSimulator *sim,
                                      double *q,
                                      size_t nq,
                                      double *v,
                                      size_t nv);

/**
 * Replaces the state at the current time.
 *
 * # Safety
 * `sim` must be a live handle, `q` and `v` readable for `nq` and `nv`
 * doubles.
 */
EcsimStatus ecsim_simulator_set_state(EcsimSimulator *sim,
                                      const double *q,
                                      size_t nq,
                                      const double *v,
                                      size_t nv);

/**
 * Fills `out` with the work counters so far.
 *
 * # Safety
 * `sim` must be a live handle and `out` writable.
 */
EcsimStatus ecsim_simulator_stats(const EcsimSimulator *sim, EcsimStats *out);

/**
 * # Safety
 * `sim` must be null or a handle not yet freed.
 */
void ecsim_simulator_free(EcsimSimulator *sim);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ECSIM_H */
