/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef BSPC_H
#define BSPC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum BspcStatus {
  BSPC_STATUS_OK = 0,
  BSPC_STATUS_NULL_POINTER = 1,
  BSPC_STATUS_INVALID_ARGUMENT = 2,
  BSPC_STATUS_GRID_MISMATCH = 3,
  // Quadrature failure or singular linear system.
  BSPC_STATUS_NUMERICAL = 4,
  // The solution became non-finite.
  BSPC_STATUS_BLOW_UP = 5,
  BSPC_STATUS_IO = 6,
  // Buffer too small or memory budget exceeded.
  BSPC_STATUS_CAPACITY = 7,
  // A Rust panic was caught at the boundary.
  BSPC_STATUS_INTERNAL = 8,
} BspcStatus;

// Time-stepping scheme.
typedef enum BspcMethod {
  BSPC_METHOD_EULER = 0,
  BSPC_METHOD_RK2 = 1,
  BSPC_METHOD_RK4 = 2,
} BspcMethod;

// Velocity grid handle.
typedef struct BspcGrid BspcGrid;

// Collision operator, its weight table and the conservation constraints.
typedef struct BspcSolver BspcSolver;

// Distribution handle: nodal values plus time.
typedef struct BspcState BspcState;

// Mass, momentum and energy (1/2 int g |v|^2). Unused momentum slots are 0.
typedef struct BspcMoments {
  double mass;
  double momentum[3];
  double energy;
} BspcMoments;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread ("" after a success).
//
// The pointer stays valid until the next `bspc_*` call on the same thread.
const char *bspc_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *bspc_version(void);

// Create a midpoint grid with `n` points per axis on (-l, l)^d.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum BspcStatus bspc_grid_new(size_t d, size_t n, double l, struct BspcGrid **out);

// Number of nodes n^d.
//
// # Safety
// `grid` must be null or a live handle from [`bspc_grid_new`]. Null gives 0.
size_t bspc_grid_len(const struct BspcGrid *grid);

// Release a grid. States and solvers built from it stay valid.
//
// # Safety
// `grid` must be null or a handle from [`bspc_grid_new`] not yet freed.
void bspc_grid_free(struct BspcGrid *grid);

// Maxwellian with mass `m0`, mean velocity `u0` (d entries) and temperature `t0`.
//
// # Safety
// `grid` must be a live grid handle, `u0` must point to d readable doubles
// and `out` must be writable.
enum BspcStatus bspc_state_maxwellian(const struct BspcGrid *grid,
                                      double m0,
                                      const double *u0,
                                      double t0,
                                      struct BspcState **out);

// State from `len` nodal values (row-major, last axis fastest) at time `t`.
//
// # Safety
// `grid` must be a live grid handle, `values` must point to `len` readable
// doubles and `out` must be writable.
enum BspcStatus bspc_state_from_values(const struct BspcGrid *grid,
                                       const double *values,
                                       size_t len,
                                       double t,
                                       struct BspcState **out);

// Copy the nodal values into `out`, which holds `len` doubles.
//
// # Safety
// `state` must be a live state handle and `out` must point to `len` writable doubles.
enum BspcStatus bspc_state_values(const struct BspcState *state, double *out, size_t len);

// Current time of a state (NaN for a null handle).
//
// # Safety
// `state` must be null or a live state handle.
double bspc_state_time(const struct BspcState *state);

// Mass, momentum and energy of a state.
//
// # Safety
// `state` must be a live state handle and `out` must be writable.
enum BspcStatus bspc_state_moments(const struct BspcState *state, struct BspcMoments *out);

// Release a state.
//
// # Safety
// `state` must be null or a state handle not yet freed.
void bspc_state_free(struct BspcState *state);

// Build the collision operator for an isotropic kernel |u|^lambda with
// restitution `beta`. `cache_dir` may be null to skip the on-disk table cache.
//
// # Safety
// `grid` must be a live grid handle, `cache_dir` null or a NUL-terminated
// UTF-8 path, and `out` writable.
enum BspcStatus bspc_solver_new(const struct BspcGrid *grid,
                                double lambda,
                                double beta,
                                const char *cache_dir,
                                struct BspcSolver **out);

// Release a solver.
//
// # Safety
// `solver` must be null or a solver handle not yet freed.
void bspc_solver_free(struct BspcSolver *solver);

// Evaluate the collision operator at the nodes; `conserve` selects the
// corrected operator. `out` holds `len` doubles.
//
// # Safety
// `solver` and `state` must be live handles on the same grid and `out`
// must point to `len` writable doubles.
enum BspcStatus bspc_solver_collision(const struct BspcSolver *solver,
                                      const struct BspcState *state,
                                      bool conserve,
                                      double *out,
                                      size_t len);

// Integrate `state` in place to time `t + t_span` with steps no larger
// than `dt`, conserving at every stage. On failure the state is unchanged.
//
// # Safety
// `solver` must be a live handle and `state` a live, exclusively borrowed
// state handle on the solver's grid.
enum BspcStatus bspc_solver_advance(const struct BspcSolver *solver,
                                    struct BspcState *state,
                                    enum BspcMethod scheme,
                                    double dt,
                                    double t_span);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BSPC_H */
