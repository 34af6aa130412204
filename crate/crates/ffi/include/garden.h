#ifndef GARDEN_H
#define GARDEN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum GardenStatus {
  GARDEN_STATUS_OK = 0,
  GARDEN_STATUS_NULL_ARGUMENT = 1,
  GARDEN_STATUS_INVALID_UTF8 = 2,
  GARDEN_STATUS_MALFORMED_HASH_NAME = 3,
  GARDEN_STATUS_INVALID_INPUT = 4,
  GARDEN_STATUS_PACKAGE_NOT_FOUND = 5,
  GARDEN_STATUS_CONFIG = 6,
  GARDEN_STATUS_CORRUPT_STORE = 7,
  GARDEN_STATUS_IO = 8,
  GARDEN_STATUS_OTHER = 9,
  GARDEN_STATUS_PANIC = 10,
} GardenStatus;

/**
 * Opaque store configuration.
 */
typedef struct GardenConfig GardenConfig;

/**
 * Opaque runtime environment (PATH-style lists plus scalars).
 */
typedef struct GardenEnv GardenEnv;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *garden_last_error(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void garden_string_free(char *s);

/**
 * Loads the configuration from the config file and `GARDEN_*` variables.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage.
 */
enum GardenStatus garden_config_from_env(struct GardenConfig **out);

/**
 * Builds a configuration with explicit public and personal roots.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum GardenStatus garden_config_new(const char *public_root,
                                    const char *personal_root,
                                    struct GardenConfig **out);

/**
 * # Safety
 * `cfg` must come from a config constructor and not have been freed.
 */
void garden_config_free(struct GardenConfig *cfg);

/**
 * Computes the 32-character digest for a package's hash inputs.
 * `deps` holds `ndeps` full hash-names.
 *
 * # Safety
 * Buffers must be valid for their stated lengths; strings NUL-terminated.
 */
enum GardenStatus garden_hash_compute(const uint8_t *recipe,
                                      size_t recipe_len,
                                      const uint8_t *helper,
                                      size_t helper_len,
                                      const char *system,
                                      const char *const *deps,
                                      size_t ndeps,
                                      char **out_digest);

/**
 * Checks that `text` is a well-formed hash-name.
 *
 * # Safety
 * `text` must be NUL-terminated.
 */
enum GardenStatus garden_hash_name_validate(const char *text);

/**
 * Finds the store directory of a package along the configured storepath.
 *
 * # Safety
 * `cfg` must be a live handle; `hashname` NUL-terminated; `out_path` writable.
 */
enum GardenStatus garden_locate(const struct GardenConfig *cfg,
                                const char *hashname,
                                char **out_path);

/**
 * Snapshots the calling process's runtime variables into a new environment.
 *
 * # Safety
 * `cfg` must be a live handle; `out` writable.
 */
enum GardenStatus garden_env_from_process(const struct GardenConfig *cfg, struct GardenEnv **out);

/**
 * Creates an environment whose PATH-style variable `var` holds the
 * colon-separated `value`. Other variables start empty.
 *
 * # Safety
 * `cfg` must be a live handle; strings NUL-terminated; `out` writable.
 */
enum GardenStatus garden_env_with(const struct GardenConfig *cfg,
                                  const char *var,
                                  const char *value,
                                  struct GardenEnv **out);

/**
 * Applies a package's composition files to `env`. On failure `env` is
 * left unchanged.
 *
 * # Safety
 * Handles must be live; `hashname` NUL-terminated.
 */
enum GardenStatus garden_env_add(struct GardenEnv *env,
                                 const struct GardenConfig *cfg,
                                 const char *hashname);

/**
 * Renders one variable of `env`. Writes NULL when the variable is unset.
 *
 * # Safety
 * `env` must be live; `var` NUL-terminated; `out_value` writable.
 */
enum GardenStatus garden_env_get(const struct GardenEnv *env, const char *var, char **out_value);

/**
 * Shell commands that turn `before` into `env`.
 *
 * # Safety
 * Handles must be live; `out_script` writable.
 */
enum GardenStatus garden_env_shell_update(const struct GardenEnv *env,
                                          const struct GardenEnv *before,
                                          char **out_script);

/**
 * # Safety
 * `env` must come from an environment constructor and not have been freed.
 */
void garden_env_free(struct GardenEnv *env);

/**
 * Transitive closure of a package, one hash-name per line, root first.
 *
 * # Safety
 * `cfg` must be live; `hashname` NUL-terminated; `out_members` writable.
 */
enum GardenStatus garden_closure(const struct GardenConfig *cfg,
                                 const char *hashname,
                                 char **out_members);

/**
 * Runs the isolation check over a file or directory. `out_clean` receives
 * 1 when every dependency resolves inside the garden; `out_report`, if not
 * NULL, receives the human-readable report.
 *
 * # Safety
 * `cfg` must be live; `path` NUL-terminated; `out_clean` writable.
 */
enum GardenStatus garden_check(const struct GardenConfig *cfg,
                               const char *path,
                               int32_t *out_clean,
                               char **out_report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GARDEN_H */
