#ifndef ADAPD_H
#define ADAPD_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Mixing rule used to build the consensus matrix.
 */
typedef enum AdapdMixing {
  ADAPD_MIXING_METROPOLIS = 0,
  ADAPD_MIXING_LAPLACIAN = 1,
} AdapdMixing;

/**
 * Activation schedule of a solver.
 */
typedef enum AdapdSchedule {
  /**
   * One uniformly drawn agent per event.
   */
  ADAPD_SCHEDULE_ASYNC_UNIFORM = 0,
  /**
   * One agent per event, driven by unit-rate exponential clocks.
   */
  ADAPD_SCHEDULE_ASYNC_CLOCKS = 1,
  /**
   * Every agent per round.
   */
  ADAPD_SCHEDULE_SYNC = 2,
} AdapdSchedule;

/**
 * Result of every fallible call.
 */
typedef enum AdapdStatus {
  ADAPD_STATUS_OK = 0,
  ADAPD_STATUS_NULL_POINTER = 1,
  ADAPD_STATUS_INVALID_PARAMETER = 2,
  ADAPD_STATUS_DISCONNECTED = 3,
  ADAPD_STATUS_INVARIANT = 4,
  ADAPD_STATUS_DIMENSION = 5,
  ADAPD_STATUS_ESTIMATION = 6,
  ADAPD_STATUS_NON_CONVERGENCE = 7,
  ADAPD_STATUS_CONTRACT = 8,
  ADAPD_STATUS_FORMAT = 9,
  ADAPD_STATUS_IO = 10,
  ADAPD_STATUS_BUFFER_TOO_SMALL = 11,
  ADAPD_STATUS_PANIC = 12,
} AdapdStatus;

/**
 * Problem instance.
 */
typedef struct AdapdInstance AdapdInstance;

/**
 * Communication graph with its consensus matrix.
 */
typedef struct AdapdNetwork AdapdNetwork;

/**
 * Centralized reference solution.
 */
typedef struct AdapdReference AdapdReference;

/**
 * Solver state.
 */
typedef struct AdapdSolver AdapdSolver;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *adapd_version(void);

/**
 * Length in bytes of the last error message on this thread, excluding the NUL.
 */
size_t adapd_last_error_length(void);

/**
 * Copies the last error message into `buf` with a trailing NUL.
 *
 * # Safety
 * `buf` must point to `len` writable bytes.
 */
enum AdapdStatus adapd_last_error_message(char *buf, size_t len);

/**
 * Draws a localization instance with `n` unknowns, `agents` agents and `rows`
 * measurement rows per agent.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum AdapdStatus adapd_instance_localization(size_t n,
                                             size_t agents,
                                             size_t rows,
                                             double noise_std,
                                             uint64_t seed,
                                             struct AdapdInstance **out);

/**
 * Parses an instance container.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` a valid handle slot.
 */
enum AdapdStatus adapd_instance_from_container(const char *text, struct AdapdInstance **out);

/**
 * # Safety
 * `inst` must be null or a live instance handle.
 */
size_t adapd_instance_dim(const struct AdapdInstance *inst);

/**
 * # Safety
 * `inst` must be null or a live instance handle.
 */
size_t adapd_instance_num_agents(const struct AdapdInstance *inst);

/**
 * # Safety
 * `inst` must be null or a live instance handle.
 */
size_t adapd_instance_num_constraints(const struct AdapdInstance *inst);

/**
 * # Safety
 * `inst` must be null or a handle not yet freed.
 */
void adapd_instance_free(struct AdapdInstance *inst);

/**
 * Cycle over `agents` nodes plus `extra_edges` random chords.
 *
 * # Safety
 * `out` must be a valid handle slot.
 */
enum AdapdStatus adapd_network_small_world(size_t agents,
                                           size_t extra_edges,
                                           uint64_t seed,
                                           double alpha,
                                           enum AdapdMixing mixing,
                                           struct AdapdNetwork **out);

/**
 * Network from `num_edges` pairs stored flat in `edges` (`2 * num_edges` entries).
 *
 * # Safety
 * `edges` must point to `2 * num_edges` readable values (or be null when
 * `num_edges` is 0); `out` must be a valid handle slot.
 */
enum AdapdStatus adapd_network_from_edges(size_t agents,
                                          const size_t *edges,
                                          size_t num_edges,
                                          double alpha,
                                          enum AdapdMixing mixing,
                                          struct AdapdNetwork **out);

/**
 * # Safety
 * `net` must be null or a live network handle.
 */
size_t adapd_network_num_edges(const struct AdapdNetwork *net);

/**
 * # Safety
 * `net` must be null or a handle not yet freed.
 */
void adapd_network_free(struct AdapdNetwork *net);

/**
 * Solves the consensus-enforced problem to tolerance `tol`.
 *
 * # Safety
 * `inst` and `net` must be live handles; `out` a valid handle slot.
 */
enum AdapdStatus adapd_reference_solve(const struct AdapdInstance *inst,
                                       const struct AdapdNetwork *net,
                                       double tol,
                                       size_t max_iters,
                                       struct AdapdReference **out);

/**
 * Optimal value `φ*`, or NaN for a null handle.
 *
 * # Safety
 * `r` must be null or a live reference handle.
 */
double adapd_reference_phi_star(const struct AdapdReference *r);

/**
 * Copies `x*` (dimension `n`) into `buf`.
 *
 * # Safety
 * `r` must be a live handle and `buf` point to `len` writable values.
 */
enum AdapdStatus adapd_reference_x_star(const struct AdapdReference *r, double *buf, size_t len);

/**
 * Dual bound `max(margin · ‖y*‖, 1)`.
 *
 * # Safety
 * `r` must be a live handle and `out` a valid pointer.
 */
enum AdapdStatus adapd_reference_dual_bound(const struct AdapdReference *r,
                                            double margin,
                                            double *out);

/**
 * # Safety
 * `r` must be null or a handle not yet freed.
 */
void adapd_reference_free(struct AdapdReference *r);

/**
 * Creates a solver started at zero with step sizes at `safety_factor` times
 * their upper bounds for dual bound `dual_bound`.
 *
 * # Safety
 * `inst` and `net` must be live handles; `out` a valid handle slot.
 */
enum AdapdStatus adapd_solver_new(const struct AdapdInstance *inst,
                                  const struct AdapdNetwork *net,
                                  double dual_bound,
                                  double safety_factor,
                                  enum AdapdSchedule schedule,
                                  uint64_t horizon,
                                  uint64_t seed,
                                  struct AdapdSolver **out);

/**
 * One event or round.
 *
 * # Safety
 * `s` must be a live solver handle.
 */
enum AdapdStatus adapd_solver_step(struct AdapdSolver *s);

/**
 * Steps until the horizon.
 *
 * # Safety
 * `s` must be a live solver handle.
 */
enum AdapdStatus adapd_solver_run(struct AdapdSolver *s);

/**
 * # Safety
 * `s` must be null or a live solver handle.
 */
uint64_t adapd_solver_iteration(const struct AdapdSolver *s);

/**
 * # Safety
 * `s` must be null or a live solver handle.
 */
uint64_t adapd_solver_communications(const struct AdapdSolver *s);

/**
 * # Safety
 * `s` must be null or a live solver handle.
 */
bool adapd_solver_is_finished(const struct AdapdSolver *s);

/**
 * Copies the stacked primal iterate (`n · N` values).
 *
 * # Safety
 * `s` must be a live handle and `buf` point to `len` writable values.
 */
enum AdapdStatus adapd_solver_x(const struct AdapdSolver *s, double *buf, size_t len);

/**
 * Copies the stacked ergodic primal point for the current iteration.
 *
 * # Safety
 * `s` must be a live handle and `buf` point to `len` writable values.
 */
enum AdapdStatus adapd_solver_ergodic_x(const struct AdapdSolver *s, double *buf, size_t len);

/**
 * # Safety
 * `s` must be null or a handle not yet freed.
 */
void adapd_solver_free(struct AdapdSolver *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADAPD_H */
