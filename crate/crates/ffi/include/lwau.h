/* C interface to the lwau few-shot meta-learning engine. */

#ifndef LWAU_H
#define LWAU_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible entry point.
 */
typedef enum LwauStatus {
  LwauOk = 0,
  LwauNullPointer = 1,
  LwauInvalidArgument = 2,
  LwauIoError = 3,
  LwauRuntimeError = 4,
  LwauBufferTooSmall = 5,
} LwauStatus;

/**
 * A validated run configuration (opaque).
 */
typedef struct LwauConfig LwauConfig;

/**
 * A class pool at either precision (opaque).
 */
typedef struct LwauPool LwauPool;

/**
 * A trained meta-state at either precision (opaque).
 */
typedef struct LwauState LwauState;

/**
 * Episodic evaluation summary.
 */
typedef struct LwauEvalResult {
  double accuracy;
  double half_width_95;
  double mean_adapt_seconds;
} LwauEvalResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the most recent error message on this thread into `buf` and
 * returns the full length (excluding the terminator). A zero `cap` just
 * queries the length.
 *
 * # Safety
 * `buf` must point to `cap` writable bytes, or be null when `cap` is 0.
 */
uintptr_t lwau_last_error(char *buf, uintptr_t cap);

/**
 * Library version as a static string.
 */
const char *lwau_version(void);

/**
 * Parses a TOML configuration from text.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` a valid pointer.
 */
enum LwauStatus lwau_config_parse(const char *text, struct LwauConfig **out);

/**
 * Loads a TOML configuration file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum LwauStatus lwau_config_load(const char *path, struct LwauConfig **out);

/**
 * Copies the 64-hex-character configuration fingerprint (plus NUL).
 *
 * # Safety
 * `cfg` must be a live handle; `buf` must hold at least `cap` bytes.
 */
enum LwauStatus lwau_config_fingerprint(const struct LwauConfig *cfg, char *buf, uintptr_t cap);

/**
 * Releases a configuration handle.
 *
 * # Safety
 * `cfg` must come from this library and not already be freed.
 */
void lwau_config_free(struct LwauConfig *cfg);

/**
 * Generates the pool for one split from the configured data source.
 *
 * # Safety
 * `cfg` must be live; `split` NUL-terminated; `out` valid.
 */
enum LwauStatus lwau_pool_generate(const struct LwauConfig *cfg,
                                   const char *split,
                                   struct LwauPool **out);

/**
 * Loads a pool file written by `lwau_pool_save` or the CLI.
 *
 * # Safety
 * `path` NUL-terminated; `out` valid.
 */
enum LwauStatus lwau_pool_load(const char *path, struct LwauPool **out);

/**
 * Writes a pool to disk (bit-exact round trip).
 *
 * # Safety
 * `pool` live handle; `path` NUL-terminated.
 */
enum LwauStatus lwau_pool_save(const struct LwauPool *pool, const char *path);

/**
 * Number of classes in the pool; 0 for a null handle.
 *
 * # Safety
 * `pool` must be live or null.
 */
uintptr_t lwau_pool_class_count(const struct LwauPool *pool);

/**
 * Releases a pool handle.
 *
 * # Safety
 * `pool` must come from this library and not already be freed.
 */
void lwau_pool_free(struct LwauPool *pool);

/**
 * Runs the configured training loop. Pools are generated from the
 * configuration; `output_dir` may be null to skip checkpoint files.
 *
 * # Safety
 * `cfg` live; `output_dir` NUL-terminated or null; `out` valid.
 */
enum LwauStatus lwau_train(const struct LwauConfig *cfg,
                           const char *output_dir,
                           uint32_t workers,
                           struct LwauState **out);

/**
 * Loads a checkpoint written by this library or the CLI.
 *
 * # Safety
 * `path` NUL-terminated; `out` valid.
 */
enum LwauStatus lwau_state_load(const char *path, struct LwauState **out);

/**
 * Writes the state as a checkpoint (bit-exact round trip).
 *
 * # Safety
 * `state` live; `path` NUL-terminated.
 */
enum LwauStatus lwau_state_save(const struct LwauState *state, const char *path);

/**
 * Number of layers (= per-layer learning rates); 0 for null.
 *
 * # Safety
 * `state` must be live or null.
 */
uintptr_t lwau_state_layer_count(const struct LwauState *state);

/**
 * Copies the per-layer learning rates (bottom to top) into `buf`.
 *
 * # Safety
 * `state` live; `buf` must hold `cap` doubles.
 */
enum LwauStatus lwau_state_alpha(const struct LwauState *state, double *buf, uintptr_t cap);

/**
 * Meta-iteration counter of the state; 0 for null.
 *
 * # Safety
 * `state` must be live or null.
 */
uint64_t lwau_state_iteration(const struct LwauState *state);

/**
 * Releases a state handle.
 *
 * # Safety
 * `state` must come from this library and not already be freed.
 */
void lwau_state_free(struct LwauState *state);

/**
 * Episodic evaluation of a state on a config-generated pool split. The
 * state's fingerprint must match the configuration.
 *
 * # Safety
 * All handles live; `split` NUL-terminated; `result` valid.
 */
enum LwauStatus lwau_evaluate(const struct LwauState *state,
                              const struct LwauConfig *cfg,
                              const char *split,
                              uint32_t episodes,
                              uint32_t steps,
                              uint32_t freeze_below,
                              uint32_t workers,
                              struct LwauEvalResult *result);

/**
 * Mean per-layer update proportions after test-time adaptation on a
 * config-generated split; fills one value per layer.
 *
 * # Safety
 * Handles live; `split` NUL-terminated; `buf` holds `cap` doubles.
 */
enum LwauStatus lwau_update_proportions(const struct LwauState *state,
                                        const struct LwauConfig *cfg,
                                        const char *split,
                                        uint32_t episodes,
                                        uint32_t steps,
                                        double *buf,
                                        uintptr_t cap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LWAU_H */
