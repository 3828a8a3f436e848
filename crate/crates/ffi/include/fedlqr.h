#ifndef FEDLQR_H
#define FEDLQR_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum FedlqrStatus {
  FEDLQR_STATUS_OK = 0,
  FEDLQR_STATUS_NULL_POINTER = 1,
  FEDLQR_STATUS_INVALID_MATRIX = 2,
  FEDLQR_STATUS_INVALID_INPUT = 3,
  FEDLQR_STATUS_UNSTABLE_SYSTEM = 4,
  FEDLQR_STATUS_SOLVER_FAILURE = 5,
  FEDLQR_STATUS_STEP_TOO_LARGE = 6,
  FEDLQR_STATUS_TRAJECTORY_DIVERGED = 7,
  FEDLQR_STATUS_ESTIMATE_FAILED = 8,
  FEDLQR_STATUS_LOCAL_INSTABILITY = 9,
  FEDLQR_STATUS_PRECONDITION_FAILED = 10,
  FEDLQR_STATUS_CONFIG = 11,
  FEDLQR_STATUS_IO = 12,
  FEDLQR_STATUS_PANIC = 13,
} FedlqrStatus;

/**
 * Cost weights Q, R and initial-state covariance Σ₀.
 */
typedef struct FedlqrCost FedlqrCost;

/**
 * Set of heterogeneous systems.
 */
typedef struct FedlqrEnsemble FedlqrEnsemble;

/**
 * Outcome of a federated run.
 */
typedef struct FedlqrResult FedlqrResult;

/**
 * Plant (A, B).
 */
typedef struct FedlqrSystem FedlqrSystem;

/**
 * Federated run parameters. `model_free` selects zeroth-order gradients;
 * `local_policy` is 0 = skip, 1 = abort, 2 = keep.
 */
typedef struct FedlqrFedParams {
  size_t big_l;
  size_t big_n;
  double eta_l;
  double eta_g;
  double eta_g_decay;
  bool model_free;
  size_t n_s;
  size_t tau;
  double r;
  double beta;
  uint64_t master_seed;
  uint32_t local_policy;
} FedlqrFedParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failing call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *fedlqr_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fedlqr_version(void);

/**
 * Creates a system from row-major A (nx×nx) and B (nx×nu).
 */
enum FedlqrStatus fedlqr_system_new(const double *a,
                                    const double *b,
                                    size_t nx,
                                    size_t nu,
                                    struct FedlqrSystem **out);

void fedlqr_system_free(struct FedlqrSystem *sys);

/**
 * Creates a cost from row-major Q (nx×nx), R (nu×nu), Σ₀ (nx×nx) and the
 * initial-state bound H.
 */
enum FedlqrStatus fedlqr_cost_new(const double *q,
                                  const double *r,
                                  const double *sigma0,
                                  size_t nx,
                                  size_t nu,
                                  double h_bound,
                                  struct FedlqrCost **out);

void fedlqr_cost_free(struct FedlqrCost *cost);

/**
 * Writes the optimal gain (nu×nx, row-major) of one system.
 */
enum FedlqrStatus fedlqr_optimal_gain(const struct FedlqrSystem *sys,
                                      const struct FedlqrCost *cost,
                                      double *k_out);

/**
 * Spectral radius of A − BK.
 */
enum FedlqrStatus fedlqr_closed_loop_radius(const struct FedlqrSystem *sys,
                                            const double *k,
                                            double *out);

/**
 * Exact cost C(K) and, when `grad_out` is non-NULL, the gradient (nu×nx).
 */
enum FedlqrStatus fedlqr_exact_cost(const struct FedlqrSystem *sys,
                                    const struct FedlqrCost *cost,
                                    const double *k,
                                    double *cost_out,
                                    double *grad_out);

/**
 * Generates M systems around `nominal` with identity masks. When `k0` is
 * non-NULL, perturbations it fails to stabilize are redrawn (up to
 * `max_draws` per system).
 */
enum FedlqrStatus fedlqr_ensemble_generate(const struct FedlqrSystem *nominal,
                                           size_t m,
                                           double eps1,
                                           double eps2,
                                           uint64_t seed,
                                           const double *k0,
                                           size_t max_draws,
                                           struct FedlqrEnsemble **out);

/**
 * Parses an ensemble from its JSON form.
 */
enum FedlqrStatus fedlqr_ensemble_from_json(const char *json, struct FedlqrEnsemble **out);

/**
 * Number of systems, or 0 for NULL.
 */
size_t fedlqr_ensemble_len(const struct FedlqrEnsemble *e);

void fedlqr_ensemble_free(struct FedlqrEnsemble *e);

/**
 * Runs federated policy gradient from `k0` (nu×nx, row-major).
 */
enum FedlqrStatus fedlqr_run(const struct FedlqrEnsemble *ensemble,
                             const struct FedlqrCost *cost,
                             const double *k0,
                             const struct FedlqrFedParams *params,
                             struct FedlqrResult **out);

/**
 * Completed rounds, or 0 for NULL.
 */
size_t fedlqr_result_rounds(const struct FedlqrResult *res);

/**
 * True when the run stopped because the global gain destabilized a system.
 */
bool fedlqr_result_halted(const struct FedlqrResult *res);

/**
 * Normalized nominal cost gap after `round` rounds (0 = initial gain).
 */
enum FedlqrStatus fedlqr_result_normalized_gap(const struct FedlqrResult *res,
                                               size_t round,
                                               double *out);

/**
 * Writes the final global gain (nu×nx, row-major).
 */
enum FedlqrStatus fedlqr_result_final_gain(const struct FedlqrResult *res, double *k_out);

void fedlqr_result_free(struct FedlqrResult *res);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDLQR_H */
