#ifndef PIRBF_H
#define PIRBF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. `Ok` is zero.
 */
typedef enum PirbfStatus {
  PIRBF_STATUS_OK = 0,
  PIRBF_STATUS_NULL_POINTER = 1,
  PIRBF_STATUS_INVALID_ARGUMENT = 2,
  PIRBF_STATUS_DIMENSION_MISMATCH = 3,
  PIRBF_STATUS_IO = 4,
  PIRBF_STATUS_CHECKPOINT = 5,
  PIRBF_STATUS_NO_CLOSED_FORM = 6,
  PIRBF_STATUS_NUMERICAL = 7,
  PIRBF_STATUS_PANIC = 8,
} PirbfStatus;

/**
 * A trained network.
 */
typedef struct PirbfNetwork PirbfNetwork;

/**
 * A pricing problem.
 */
typedef struct PirbfProblem PirbfProblem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *pirbf_last_error(void);

/**
 * Loads the network stored in a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PirbfStatus pirbf_network_load(const char *path, struct PirbfNetwork **out);

/**
 * # Safety
 * `net` must come from `pirbf_network_load` and not be used afterwards.
 */
void pirbf_network_free(struct PirbfNetwork *net);

/**
 * Input width `d + 1` (asset prices then time); 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t pirbf_network_input_dim(const struct PirbfNetwork *net);

/**
 * # Safety
 * `net` must be null or a live handle.
 */
size_t pirbf_network_neurons(const struct PirbfNetwork *net);

/**
 * Evaluates `n_points` row-major points of width `dim` into `out`.
 *
 * # Safety
 * `points` must hold `n_points * dim` values and `out` room for `n_points`.
 */
enum PirbfStatus pirbf_network_evaluate(const struct PirbfNetwork *net,
                                        const double *points,
                                        size_t n_points,
                                        size_t dim,
                                        double *out);

/**
 * Looks up a named problem: `put1d`, `exchange2d` or `basket4d`.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PirbfStatus pirbf_problem_preset(const char *name, struct PirbfProblem **out);

/**
 * The problem a checkpoint was trained on.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PirbfStatus pirbf_problem_from_checkpoint(const char *path, struct PirbfProblem **out);

/**
 * # Safety
 * `prob` must come from this library and not be used afterwards.
 */
void pirbf_problem_free(struct PirbfProblem *prob);

/**
 * Number of assets; 0 for a null handle.
 *
 * # Safety
 * `prob` must be null or a live handle.
 */
size_t pirbf_problem_assets(const struct PirbfProblem *prob);

/**
 * Closed-form price at `(S_1, .., S_d, t)`.
 *
 * # Safety
 * `point` must hold `dim` values and `out` be a valid pointer.
 */
enum PirbfStatus pirbf_problem_exact_price(const struct PirbfProblem *prob,
                                           const double *point,
                                           size_t dim,
                                           double *out);

/**
 * Monte Carlo price at `t = 0` for spot prices `s0` of length `d`.
 *
 * # Safety
 * `s0` must hold `d` values; `price` and `std_err` must be valid pointers.
 */
enum PirbfStatus pirbf_problem_mc_price(const struct PirbfProblem *prob,
                                        const double *s0,
                                        size_t d,
                                        uint64_t paths,
                                        uint64_t seed,
                                        double *price,
                                        double *std_err);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PIRBF_H */
