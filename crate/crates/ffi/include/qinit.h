#ifndef QINIT_H
#define QINIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum QinitStatus {
  QINIT_STATUS_OK = 0,
  /**
   * Null pointer, bad enum value, undersized buffer or invalid UTF-8.
   */
  QINIT_STATUS_INVALID_ARGUMENT = 1,
  QINIT_STATUS_CONFIG = 2,
  QINIT_STATUS_NUMERICAL = 3,
  QINIT_STATUS_SHAPE = 4,
  QINIT_STATUS_PROTOCOL = 5,
  QINIT_STATUS_DATA = 6,
  QINIT_STATUS_IO = 7,
  QINIT_STATUS_PARSE = 8,
  QINIT_STATUS_PANIC = 9,
} QinitStatus;

/**
 * Simulated readout environment.
 */
typedef struct QinitEnv QinitEnv;

/**
 * Trained policy network.
 */
typedef struct QinitPolicy QinitPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *qinit_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *qinit_version(void);

/**
 * Create an environment from an experiment TOML document (null selects the
 * strong-readout preset).
 *
 * # Safety
 * `toml` must be null or a NUL-terminated string; `out` must be writable.
 */
enum QinitStatus qinit_env_new(const char *toml, struct QinitEnv **out);

/**
 * # Safety
 * `env` must be null or a handle from [`qinit_env_new`] not yet freed.
 */
void qinit_env_free(struct QinitEnv *env);

/**
 * Samples per readout trace, 0 for a null handle.
 *
 * # Safety
 * `env` must be null or a live handle.
 */
size_t qinit_env_readout_len(const struct QinitEnv *env);

/**
 * Simulate one readout of `level` (0 = g, 1 = e, 2 = f). `len` must equal
 * the readout length. The level at the end of the readout is written to
 * `final_level` when it is non-null.
 *
 * # Safety
 * `env` must be a live handle, `i_out`/`q_out` must hold `len` doubles.
 */
enum QinitStatus qinit_env_measure(const struct QinitEnv *env,
                                   uint32_t level,
                                   bool weak,
                                   uint64_t seed,
                                   double *i_out,
                                   double *q_out,
                                   size_t len,
                                   uint32_t *final_level);

/**
 * Load a policy checkpoint (JSON) from `path`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum QinitStatus qinit_policy_load(const char *path, struct QinitPolicy **out);

/**
 * # Safety
 * `policy` must be null or a handle from [`qinit_policy_load`] not yet freed.
 */
void qinit_policy_free(struct QinitPolicy *policy);

/**
 * Number of policy outputs, 0 for a null handle.
 *
 * # Safety
 * `policy` must be null or a live handle.
 */
size_t qinit_policy_n_actions(const struct QinitPolicy *policy);

/**
 * Samples per readout the policy expects, 0 for a null handle.
 *
 * # Safety
 * `policy` must be null or a live handle.
 */
size_t qinit_policy_readout_len(const struct QinitPolicy *policy);

/**
 * Action probabilities for one readout at the start of an episode (memory
 * slots, if any, are empty).
 *
 * # Safety
 * `i`/`q` must hold `len` doubles, `probs_out` must hold `n_probs` doubles.
 */
enum QinitStatus qinit_policy_probs(const struct QinitPolicy *policy,
                                    const double *i,
                                    const double *q,
                                    size_t len,
                                    double *probs_out,
                                    size_t n_probs);

/**
 * Network latency and total feedback latency in ns of the policy's
 * topology (null selects the default topology).
 *
 * # Safety
 * `policy` must be null or a live handle; both outputs must be writable.
 */
enum QinitStatus qinit_latency_ns(const struct QinitPolicy *policy, double *nn_ns, double *loop_ns);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QINIT_H */
