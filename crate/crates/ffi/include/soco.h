/* C interface of the solo-to-collaborative transfer lab. */

#ifndef SOCO_FFI_H
#define SOCO_FFI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum SocoStatus {
  SOCO_STATUS_OK = 0,
  SOCO_STATUS_NULL_POINTER = 1,
  SOCO_STATUS_INVALID_ARGUMENT = 2,
  SOCO_STATUS_MISSING_INPUT = 3,
  SOCO_STATUS_FORMAT_ERROR = 4,
  SOCO_STATUS_NUMERIC_ERROR = 5,
  SOCO_STATUS_INTERNAL = 6,
} SocoStatus;

/**
 * Opaque particle-world handle.
 */
typedef struct SocoEnv SocoEnv;

/**
 * Opaque evaluation-policy handle: the per-agent policy bundle from a
 * checkpoint plus the episode RNG used by rule-based gating modes.
 */
typedef struct SocoPolicy SocoPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the most recent error message (NUL-terminated, truncated to `len`)
 * into `buf`. Returns the full message length in bytes, excluding the NUL.
 *
 * # Safety
 * `buf` must point to `len` writable bytes (or be null to query the length).
 */
size_t soco_last_error(char *buf, size_t len);

/**
 * Static version string of the library.
 */
const char *soco_version(void);

/**
 * Creates a cooperative world with `n_agents` agents (1 = the solo
 * navigation task) and writes the handle to `out`.
 *
 * # Safety
 * `out` must be a valid pointer to a `SocoEnv*`.
 */
enum SocoStatus soco_env_create(uint32_t n_agents, uint64_t seed, struct SocoEnv **out);

/**
 * Number of agents in the world.
 *
 * # Safety
 * `env` must be a live handle.
 */
uint32_t soco_env_num_agents(const struct SocoEnv *env);

/**
 * Width of one agent's observation vector.
 *
 * # Safety
 * `env` must be a live handle.
 */
uint32_t soco_env_obs_width(const struct SocoEnv *env);

/**
 * Width of the global state vector.
 *
 * # Safety
 * `env` must be a live handle.
 */
uint32_t soco_env_state_width(const struct SocoEnv *env);

/**
 * Starts a fresh episode and writes the joint observation
 * (`n_agents * obs_width` doubles, agent-major).
 *
 * # Safety
 * `env` must be a live handle; `obs_out` must hold `obs_len` doubles.
 */
enum SocoStatus soco_env_reset(struct SocoEnv *env, uint64_t seed, double *obs_out, size_t obs_len);

/**
 * Applies a joint action (`n_agents * 2` doubles, agent-major), then writes
 * the next joint observation, the shared reward, and the episode-end flag.
 *
 * # Safety
 * All pointers must be valid; `actions` must hold `act_len` doubles and
 * `obs_out` must hold `obs_len` doubles.
 */
enum SocoStatus soco_env_step(struct SocoEnv *env,
                              const double *actions,
                              size_t act_len,
                              double *obs_out,
                              size_t obs_len,
                              double *reward_out,
                              bool *done_out);

/**
 * Writes the global state (`state_width` doubles).
 *
 * # Safety
 * `env` must be a live handle; `out` must hold `len` doubles.
 */
enum SocoStatus soco_env_global_state(const struct SocoEnv *env, double *out, size_t len);

/**
 * Releases an environment handle. Null is a no-op.
 *
 * # Safety
 * `env` must be a handle from `soco_env_create`, not yet freed.
 */
void soco_env_free(struct SocoEnv *env);

/**
 * Loads a checkpoint (any trained kind) as an evaluation policy bundle.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` a valid pointer.
 */
enum SocoStatus soco_policy_load(const char *path, struct SocoPolicy **out);

/**
 * Number of agents the policy controls.
 *
 * # Safety
 * `policy` must be a live handle.
 */
uint32_t soco_policy_num_agents(const struct SocoPolicy *policy);

/**
 * Observation width the policy expects per agent.
 *
 * # Safety
 * `policy` must be a live handle.
 */
uint32_t soco_policy_obs_width(const struct SocoPolicy *policy);

/**
 * Reseeds the per-episode randomness (episode-fixed gating draws). Call at
 * every episode start when using rule-based gating; harmless otherwise.
 *
 * # Safety
 * `policy` must be a live handle.
 */
enum SocoStatus soco_policy_begin_episode(struct SocoPolicy *policy, uint64_t seed);

/**
 * Deterministic evaluation acting: maps the joint observation
 * (`n_agents * obs_width`) to the joint action (`n_agents * 2`).
 *
 * # Safety
 * `policy` must be a live handle; buffers must have the advertised lengths.
 */
enum SocoStatus soco_policy_act(struct SocoPolicy *policy,
                                const double *joint_obs,
                                size_t obs_len,
                                double *actions_out,
                                size_t act_len);

/**
 * Releases a policy handle. Null is a no-op.
 *
 * # Safety
 * `policy` must be a handle from `soco_policy_load`, not yet freed.
 */
void soco_policy_free(struct SocoPolicy *policy);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* SOCO_FFI_H */
